#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xabr {

// 256 raw bytes plus three specials. Shared by donor and receiver.
class ByteTokenizer {
 public:
  static constexpr std::int32_t kBos = 256;
  static constexpr std::int32_t kEos = 257;
  static constexpr std::int32_t kPad = 258;
  static constexpr std::size_t kVocabSize = 259;

  std::size_t vocab_size() const { return kVocabSize; }

  // BOS + bytes + EOS
  std::vector<std::int32_t> tokenize(std::string_view text) const;
  // Bytes only, without BOS/EOS
  std::vector<std::int32_t> encode_bytes(std::string_view text) const;
  // Specials are dropped.
  std::string detokenize(std::span<const std::int32_t> ids) const;
};

}  // namespace xabr
