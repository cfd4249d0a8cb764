#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace neox::tok {

using TokenId = std::int32_t;

inline constexpr int kMaxSpaceRun = 24;
inline constexpr std::size_t kByteTokens = 256;
inline constexpr std::size_t kBaseVocab = kByteTokens + kMaxSpaceRun;
inline constexpr std::size_t kNeoxVocabSize = 50257;

enum class SegmentKind { word, space_run, punctuation, newline, other };

std::string_view to_string(SegmentKind kind);

struct Segment {
  std::string bytes;
  SegmentKind kind;
  // Preceded by whitespace, or first in the text. A string-start word is
  // encoded exactly as if a single space preceded it.
  bool word_boundary;

  bool operator==(const Segment&) const = default;
};

// Splits raw bytes into pre-tokenization segments. Total: any byte sequence
// is accepted and the segments concatenate back to the input.
//
//   * maximal runs of >= 2 spaces (or a lone space not followed by a word or
//     symbol) become space-run segments, split greedily into chunks of <= 24;
//   * '\n' is always its own segment;
//   * maximal runs of ASCII letters/digits and non-ASCII bytes form words;
//   * maximal runs of anything else form punctuation (or `other` if the run
//     holds no ASCII punctuation, e.g. tabs and control bytes);
//   * a single space directly before a word or symbol run is absorbed into it.
std::vector<Segment> pretokenize(std::string_view text);

bool is_ascii_punctuation(unsigned char c);
bool is_whitespace_byte(unsigned char c);

struct Merge {
  TokenId left;
  TokenId right;
  TokenId result;

  bool operator==(const Merge&) const = default;
};

struct EncodeOptions {
  // When false the text is treated as a continuation of earlier text, so its
  // first segment gets no implicit leading space. Used when scoring or
  // decoding fragments that follow a prompt.
  bool at_string_start = true;
};

class TokenizerModel {
 public:
  // Byte tokens, the 24 space-run tokens, then `reserved` specials.
  static TokenizerModel with_base_vocab(std::span<const std::string> reserved = {});

  std::size_t vocab_size() const { return vocab_.size(); }
  // Exclusive upper bound on valid ids.
  TokenId id_bounds() const { return static_cast<TokenId>(vocab_.size()); }

  const std::string& token_bytes(TokenId id) const;
  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<TokenId>& reserved_ids() const { return reserved_; }

  TokenId space_run_id(int run_length) const;
  bool is_space_run(TokenId id) const;

  // Appends a merge of two existing tokens and returns the new id.
  TokenId add_merge(TokenId left, TokenId right);

  std::vector<TokenId> encode(std::string_view text, EncodeOptions opts = {}) const;
  std::string decode(std::span<const TokenId> ids, EncodeOptions opts = {}) const;

  // Applies the learned merges to one symbol sequence in rank order.
  void apply_merges(std::vector<TokenId>& symbols) const;

  // Throws ValidationError describing the first violated invariant.
  void validate() const;

  bool operator==(const TokenizerModel& other) const {
    return vocab_ == other.vocab_ && merges_ == other.merges_ &&
           space_runs_ == other.space_runs_ && reserved_ == other.reserved_;
  }

 private:
  friend TokenizerModel load_model(const std::filesystem::path& path);
  friend TokenizerModel parse_model(std::string_view text);

  void rebuild_index();
  static std::uint64_t pair_key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }

  std::vector<std::string> vocab_;
  std::vector<Merge> merges_;
  std::array<TokenId, kMaxSpaceRun> space_runs_{};
  std::vector<TokenId> reserved_;
  // pair -> merge rank
  std::unordered_map<std::uint64_t, std::uint32_t> merge_rank_;
};

inline std::vector<TokenId> encode(const TokenizerModel& model, std::string_view text) {
  return model.encode(text);
}
inline std::string decode(const TokenizerModel& model, std::span<const TokenId> ids) {
  return model.decode(ids);
}

struct BpeTrainOptions {
  std::size_t target_vocab = 2048;
  std::vector<std::string> reserved;
};

struct BpeTrainResult {
  TokenizerModel model;
  std::vector<std::string> warnings;
};

std::size_t min_vocab_size(std::size_t reserved_count);

// Byte-level BPE: counts adjacent pairs inside segments only, merges the most
// frequent pair (ties -> smaller (left bytes, right bytes)) until the
// vocabulary reaches the target or no pair is left.
BpeTrainResult train_bpe(std::span<const std::string> corpus, const BpeTrainOptions& opts);

// Text format:
//   neox-tok v1 <vocab_size>
//   <id>\t<escaped bytes>          one per vocab entry
//   #MERGES
//   <left_id> <right_id> <new_id>  one per merge, in rank order
// Printable ASCII other than '\' is written literally; every other byte
// (space included) is written as \xHH.
std::string serialize_model(const TokenizerModel& model);
TokenizerModel parse_model(std::string_view text);
void save_model(const TokenizerModel& model, const std::filesystem::path& path);
TokenizerModel load_model(const std::filesystem::path& path);

std::string escape_bytes(std::string_view bytes);
std::string unescape_bytes(std::string_view escaped);

}  // namespace neox::tok
