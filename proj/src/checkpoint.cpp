#include "xabr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "xabr/errors.hpp"

namespace xabr {
namespace {

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i64: return 8;
    case DType::u8: return 1;
  }
  return 0;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  const U u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return static_cast<T>(u);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (remaining() < n)
      throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T read(const char* what) {
    return get_le<T>(take(sizeof(T), what));
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

NamedArray NamedArray::from_scalars(std::string name, const Shape& shape, std::span<const Scalar> values) {
  NamedArray a;
  a.name = std::move(name);
  a.dtype = kDoubleEngine ? DType::f64 : DType::f32;
  a.dims.assign(shape.begin(), shape.end());
  a.payload.reserve(values.size() * sizeof(Scalar));
  using Bits = std::conditional_t<sizeof(Scalar) == 8, std::uint64_t, std::uint32_t>;
  for (Scalar v : values) put_le(a.payload, std::bit_cast<Bits>(v));
  return a;
}

NamedArray NamedArray::from_text(std::string name, std::string_view text) {
  NamedArray a;
  a.name = std::move(name);
  a.dtype = DType::u8;
  a.dims = {text.size()};
  a.payload.assign(text.begin(), text.end());
  return a;
}

NamedArray NamedArray::from_i64(std::string name, std::span<const std::int64_t> values) {
  NamedArray a;
  a.name = std::move(name);
  a.dtype = DType::i64;
  a.dims = {values.size()};
  for (auto v : values) put_le(a.payload, v);
  return a;
}

std::size_t NamedArray::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<Scalar> NamedArray::to_scalars() const {
  std::vector<Scalar> out(numel());
  if (dtype == DType::f32) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = Scalar(std::bit_cast<float>(get_le<std::uint32_t>(payload.data() + 4 * i)));
  } else if (dtype == DType::f64) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = Scalar(std::bit_cast<double>(get_le<std::uint64_t>(payload.data() + 8 * i)));
  } else {
    throw FormatError("array '" + name + "' is not floating point", file_offset);
  }
  return out;
}

std::string NamedArray::to_text() const {
  if (dtype != DType::u8) throw FormatError("array '" + name + "' is not a byte array", file_offset);
  return {payload.begin(), payload.end()};
}

std::vector<std::int64_t> NamedArray::to_i64() const {
  if (dtype != DType::i64) throw FormatError("array '" + name + "' is not i64", file_offset);
  std::vector<std::int64_t> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<std::int64_t>(payload.data() + 8 * i);
  return out;
}

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return &a;
  return nullptr;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& a : arrays_) {
    put_le(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    out.push_back(static_cast<std::uint8_t>(a.dtype));
    put_le(out, static_cast<std::uint32_t>(a.dims.size()));
    for (auto d : a.dims) put_le(out, d);
    out.insert(out.end(), a.payload.begin(), a.payload.end());
  }
  return out;
}

Checkpoint Checkpoint::decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("bad magic, expected XABR", 0);
  const std::size_t version_at = r.pos();
  const auto version = r.read<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  const auto count = r.read<std::uint32_t>("tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.file_offset = r.pos();
    const auto name_len = r.read<std::uint32_t>("name length");
    const std::uint8_t* name = r.take(name_len, "name");
    a.name.assign(reinterpret_cast<const char*>(name), name_len);
    const std::size_t dtype_at = r.pos();
    const auto tag = r.read<std::uint8_t>("dtype");
    if (tag > static_cast<std::uint8_t>(DType::u8))
      throw FormatError("unknown dtype tag " + std::to_string(tag) + " for '" + a.name + "'", dtype_at);
    a.dtype = static_cast<DType>(tag);
    const auto rank = r.read<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible rank " + std::to_string(rank) + " for '" + a.name + "'", dtype_at);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.read<std::uint64_t>("dims");
      if (dim == 0 || dim > r.remaining()) throw FormatError("bad dimension for '" + a.name + "'", r.pos() - 8);
      a.dims.push_back(dim);
      numel *= static_cast<std::size_t>(dim);
      if (numel > r.remaining()) throw FormatError("truncated checkpoint in payload of '" + a.name + "'", r.pos());
    }
    const std::size_t n_bytes = numel * dtype_size(a.dtype);
    const std::uint8_t* payload = r.take(n_bytes, "payload");
    a.payload.assign(payload, payload + n_bytes);
    ck.arrays_.push_back(std::move(a));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after the last tensor", r.pos());
  return ck;
}

void Checkpoint::write(const std::filesystem::path& path) const {
  const auto bytes = encode();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string(), 0);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

Checkpoint make_checkpoint(const LanguageModel& model, const ExperimentConfig& config,
                           const OptimizerState* optimizer) {
  nlohmann::json meta;
  if (const auto* stack = dynamic_cast<const StackModel*>(&model)) {
    meta["kind"] = "stack";
    meta["stack"] = to_json(stack->stack().config());
    meta["group"] = stack->trainable_groups().front().name;
  } else if (dynamic_cast<const CombinedModel*>(&model) != nullptr) {
    meta["kind"] = "combined";
  } else {
    throw ContractError("make_checkpoint: unsupported model type");
  }
  meta["experiment"] = to_json(config);

  Checkpoint ck;
  ck.add(NamedArray::from_text("meta.config", meta.dump()));
  const auto params = model.parameters();
  std::string frozen;
  for (const auto& p : params) frozen.push_back(model.is_frozen(p.name) ? 1 : 0);
  ck.add(NamedArray::from_text("meta.frozen", frozen));
  for (const auto& p : params) ck.add(NamedArray::from_scalars("param." + p.name, p.tensor.shape(), p.tensor.data()));
  if (optimizer != nullptr) {
    const std::int64_t step = static_cast<std::int64_t>(optimizer->step);
    ck.add(NamedArray::from_i64("opt.step", std::span<const std::int64_t>(&step, 1)));
    for (const auto& [name, mom] : optimizer->moments) {
      ck.add(NamedArray::from_scalars("opt.m." + name, {mom.m.size()}, mom.m));
      ck.add(NamedArray::from_scalars("opt.v." + name, {mom.v.size()}, mom.v));
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const LanguageModel& model, const ExperimentConfig& config,
                     const OptimizerState* optimizer) {
  make_checkpoint(model, config, optimizer).write(path);
}

LoadedModel restore(const Checkpoint& ck) {
  const NamedArray* meta_arr = ck.find("meta.config");
  if (meta_arr == nullptr) throw FormatError("checkpoint has no meta.config", 0);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_arr->to_text());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("unreadable meta.config: ") + e.what(), meta_arr->file_offset);
  }

  LoadedModel out;
  try {
    out.kind = meta.at("kind").get<std::string>();
    out.config = parse_config(meta.at("experiment"));
    if (out.kind == "stack") {
      const StackConfig sc = stack_config_from_json(meta.at("stack"));
      out.model = std::make_unique<StackModel>(TransformerStack(sc, 0), meta.at("group").get<std::string>());
    } else if (out.kind == "combined") {
      out.model = std::make_unique<CombinedModel>(TransformerStack(out.config.donor, 0), out.config.receiver,
                                                  out.config.bridge, 0);
    } else {
      throw FormatError("unknown model kind '" + out.kind + "'", meta_arr->file_offset);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("incomplete meta.config: ") + e.what(), meta_arr->file_offset);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid config snapshot: ") + e.what(), meta_arr->file_offset);
  }

  const auto params = out.model->parameters();
  std::set<std::string> param_names, seen;
  for (const auto& p : params) param_names.insert(p.name);
  for (const auto& a : ck.arrays()) {
    const std::string& n = a.name;
    bool known = n == "meta.config" || n == "meta.frozen" || n == "opt.step";
    if (n.rfind("param.", 0) == 0) known = param_names.count(n.substr(6)) != 0;
    if (n.rfind("opt.m.", 0) == 0 || n.rfind("opt.v.", 0) == 0) known = param_names.count(n.substr(6)) != 0;
    if (!known) throw FormatError("unknown tensor name '" + n + "'", a.file_offset);
    if (!seen.insert(n).second) throw FormatError("duplicate tensor name '" + n + "'", a.file_offset);
  }

  // Decode everything before touching the model.
  std::vector<std::vector<Scalar>> values;
  for (const auto& p : params) {
    const NamedArray* a = ck.find("param." + p.name);
    if (a == nullptr) throw FormatError("missing tensor 'param." + p.name + "'", 0);
    const Shape dims(a->dims.begin(), a->dims.end());
    if (dims != p.tensor.shape())
      throw FormatError("tensor 'param." + p.name + "' has shape " + shape_str(dims) + ", expected " +
                            shape_str(p.tensor.shape()),
                        a->file_offset);
    values.push_back(a->to_scalars());
  }
  const NamedArray* frozen = ck.find("meta.frozen");
  if (frozen == nullptr) throw FormatError("checkpoint has no meta.frozen", 0);
  const std::string flags = frozen->to_text();
  if (flags.size() != params.size())
    throw FormatError("meta.frozen has " + std::to_string(flags.size()) + " entries for " +
                          std::to_string(params.size()) + " parameters",
                      frozen->file_offset);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto dst = t.mutable_data();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
  if (auto* stack = dynamic_cast<StackModel*>(out.model.get())) {
    for (std::size_t i = 0; i < params.size(); ++i) stack->stack().set_frozen(params[i].name, flags[i] != 0);
  } else {
    auto* combined = static_cast<CombinedModel*>(out.model.get());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string& n = params[i].name;
      const bool f = flags[i] != 0;
      if (n.rfind("donor.", 0) == 0)
        combined->donor.set_frozen(n.substr(6), f);
      else if (n.rfind("receiver.", 0) == 0)
        combined->receiver.set_frozen(n.substr(9), f);
      else if (f)
        throw FormatError("bridge parameter '" + n + "' is marked frozen", frozen->file_offset);
    }
  }

  if (const NamedArray* step = ck.find("opt.step")) {
    const auto s = step->to_i64();
    if (s.size() != 1 || s[0] < 0) throw FormatError("opt.step must hold one non-negative value", step->file_offset);
    out.has_optimizer = true;
    out.optimizer.step = static_cast<std::uint64_t>(s[0]);
    for (const auto& a : ck.arrays()) {
      if (a.name.rfind("opt.m.", 0) != 0) continue;
      const std::string name = a.name.substr(6);
      const NamedArray* v = ck.find("opt.v." + name);
      if (v == nullptr) throw FormatError("moment 'opt.m." + name + "' has no matching opt.v", a.file_offset);
      out.optimizer.moments[name] = {a.to_scalars(), v->to_scalars()};
    }
  }
  return out;
}

LoadedModel load_checkpoint(const std::filesystem::path& path) { return restore(Checkpoint::read(path)); }

TransformerStack load_stack(const std::filesystem::path& path) {
  LoadedModel loaded = load_checkpoint(path);
  auto* stack = dynamic_cast<StackModel*>(loaded.model.get());
  if (stack == nullptr) throw FormatError("checkpoint " + path.string() + " holds a " + loaded.kind + " model, not a stack", 0);
  return std::move(stack->stack());
}

std::uint64_t parameter_checksum(std::span<const NamedParam> params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    const auto data = p.tensor.data();
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(data.data());
    for (std::size_t i = 0; i < data.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace xabr
