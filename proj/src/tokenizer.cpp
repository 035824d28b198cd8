#include "xabr/tokenizer.hpp"

namespace xabr {

std::vector<std::int32_t> ByteTokenizer::encode_bytes(std::string_view text) const {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(c)));
  return ids;
}

std::vector<std::int32_t> ByteTokenizer::tokenize(std::string_view text) const {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size() + 2);
  ids.push_back(kBos);
  for (char c : text) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(c)));
  ids.push_back(kEos);
  return ids;
}

std::string ByteTokenizer::detokenize(std::span<const std::int32_t> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (auto id : ids)
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  return out;
}

}  // namespace xabr
