#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xabr/combined.hpp"
#include "xabr/config.hpp"
#include "xabr/optim.hpp"

// Binary layout, all integers little-endian:
//   "XABR" | u32 version | u32 count |
//   count × ( u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] | payload )
// dtype: 0 = f32, 1 = f64, 2 = i64, 3 = u8.
namespace xabr {

inline constexpr char kCheckpointMagic[4] = {'X', 'A', 'B', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2, u8 = 3 };

struct NamedArray {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;  // little-endian element bytes
  std::size_t file_offset = 0;        // where the entry started when decoded

  static NamedArray from_scalars(std::string name, const Shape& shape, std::span<const Scalar> values);
  static NamedArray from_text(std::string name, std::string_view text);
  static NamedArray from_i64(std::string name, std::span<const std::int64_t> values);

  std::size_t numel() const;
  std::vector<Scalar> to_scalars() const;
  std::string to_text() const;
  std::vector<std::int64_t> to_i64() const;
};

// Ordered named-array container.
class Checkpoint {
 public:
  void add(NamedArray array) { arrays_.push_back(std::move(array)); }
  const NamedArray* find(std::string_view name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  std::vector<std::uint8_t> encode() const;
  // Throws FormatError on bad magic/version, truncation or trailing bytes.
  static Checkpoint decode(std::span<const std::uint8_t> bytes);
  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

 private:
  std::vector<NamedArray> arrays_;
};

// Parameters ("param.<name>"), frozen flags ("meta.frozen"), a JSON config
// snapshot ("meta.config") and, when given, AdamW moments ("opt.m.<name>",
// "opt.v.<name>") plus the step counter ("opt.step").
Checkpoint make_checkpoint(const LanguageModel& model, const ExperimentConfig& config,
                           const OptimizerState* optimizer = nullptr);
void save_checkpoint(const std::filesystem::path& path, const LanguageModel& model, const ExperimentConfig& config,
                     const OptimizerState* optimizer = nullptr);

struct LoadedModel {
  std::string kind;  // "stack" or "combined"
  std::unique_ptr<LanguageModel> model;
  ExperimentConfig config;
  bool has_optimizer = false;
  OptimizerState optimizer;
};

// Rebuilds a model from a decoded checkpoint. Nothing is returned unless
// every array was accounted for; unknown names are FormatErrors.
LoadedModel restore(const Checkpoint& checkpoint);
LoadedModel load_checkpoint(const std::filesystem::path& path);

// Loads a stack checkpoint (e.g. a pretrained donor) and returns the stack.
TransformerStack load_stack(const std::filesystem::path& path);

// FNV-1a over the raw bytes of the given parameters, in order.
std::uint64_t parameter_checksum(std::span<const NamedParam> params);

}  // namespace xabr
