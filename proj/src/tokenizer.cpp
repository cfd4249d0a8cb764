#include "neox/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "neox/error.hpp"

namespace neox::tok {

namespace {

enum class ByteClass { space, newline, word, symbol };

ByteClass classify(unsigned char c) {
  if (c == ' ') return ByteClass::space;
  if (c == '\n') return ByteClass::newline;
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80) {
    return ByteClass::word;
  }
  return ByteClass::symbol;
}

bool starts_with_space(std::string_view s) { return !s.empty() && s.front() == ' '; }

}  // namespace

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::word: return "word";
    case SegmentKind::space_run: return "space-run";
    case SegmentKind::punctuation: return "punctuation";
    case SegmentKind::newline: return "newline";
    case SegmentKind::other: return "other";
  }
  return "?";
}

bool is_ascii_punctuation(unsigned char c) {
  return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
         (c >= 0x7B && c <= 0x7E);
}

bool is_whitespace_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

std::vector<Segment> pretokenize(std::string_view text) {
  std::vector<Segment> out;
  const std::size_t n = text.size();
  std::size_t i = 0;

  auto preceded_by_ws = [&](std::size_t pos) {
    return pos == 0 || is_whitespace_byte(static_cast<unsigned char>(text[pos - 1]));
  };

  // Appends a word or symbol run starting at `body`, optionally absorbing
  // one space at `start`.
  auto emit_run = [&](std::size_t start, std::size_t body) {
    const ByteClass cls = classify(static_cast<unsigned char>(text[body]));
    std::size_t end = body;
    bool has_punct = false;
    while (end < n && classify(static_cast<unsigned char>(text[end])) == cls) {
      has_punct = has_punct || is_ascii_punctuation(static_cast<unsigned char>(text[end]));
      ++end;
    }
    SegmentKind kind = SegmentKind::word;
    if (cls == ByteClass::symbol) kind = has_punct ? SegmentKind::punctuation : SegmentKind::other;
    out.push_back({std::string(text.substr(start, end - start)), kind,
                   start != body || preceded_by_ws(start)});
    return end;
  };

  while (i < n) {
    const ByteClass cls = classify(static_cast<unsigned char>(text[i]));
    if (cls == ByteClass::newline) {
      out.push_back({"\n", SegmentKind::newline, preceded_by_ws(i)});
      ++i;
    } else if (cls == ByteClass::space) {
      std::size_t j = i;
      while (j < n && text[j] == ' ') ++j;
      const std::size_t run = j - i;
      const bool next_is_body = j < n && (classify(static_cast<unsigned char>(text[j])) == ByteClass::word ||
                                          classify(static_cast<unsigned char>(text[j])) == ByteClass::symbol);
      if (run == 1 && next_is_body) {
        i = emit_run(i, j);
      } else {
        while (i < j) {
          const std::size_t chunk = std::min<std::size_t>(kMaxSpaceRun, j - i);
          out.push_back({std::string(chunk, ' '), SegmentKind::space_run, preceded_by_ws(i)});
          i += chunk;
        }
      }
    } else {
      i = emit_run(i, i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// TokenizerModel

TokenizerModel TokenizerModel::with_base_vocab(std::span<const std::string> reserved) {
  TokenizerModel m;
  m.vocab_.reserve(kBaseVocab + reserved.size());
  for (std::size_t b = 0; b < kByteTokens; ++b) m.vocab_.emplace_back(1, static_cast<char>(b));
  for (int k = 1; k <= kMaxSpaceRun; ++k) {
    m.space_runs_[k - 1] = static_cast<TokenId>(m.vocab_.size());
    m.vocab_.emplace_back(static_cast<std::size_t>(k), ' ');
  }
  for (const auto& r : reserved) {
    if (r.empty()) throw ValidationError("reserved token must not be empty");
    m.reserved_.push_back(static_cast<TokenId>(m.vocab_.size()));
    m.vocab_.push_back(r);
  }
  return m;
}

const std::string& TokenizerModel::token_bytes(TokenId id) const {
  if (id < 0 || id >= id_bounds()) {
    throw ValidationError("token id " + std::to_string(id) + " out of range [0, " +
                          std::to_string(id_bounds()) + ")");
  }
  return vocab_[static_cast<std::size_t>(id)];
}

TokenId TokenizerModel::space_run_id(int run_length) const {
  if (run_length < 1 || run_length > kMaxSpaceRun) {
    throw ValidationError("space run length " + std::to_string(run_length) + " outside [1, 24]");
  }
  return space_runs_[static_cast<std::size_t>(run_length - 1)];
}

bool TokenizerModel::is_space_run(TokenId id) const {
  return std::find(space_runs_.begin(), space_runs_.end(), id) != space_runs_.end();
}

TokenId TokenizerModel::add_merge(TokenId left, TokenId right) {
  const TokenId result = id_bounds();
  vocab_.push_back(token_bytes(left) + token_bytes(right));
  merge_rank_.emplace(pair_key(left, right), static_cast<std::uint32_t>(merges_.size()));
  merges_.push_back({left, right, result});
  return result;
}

void TokenizerModel::rebuild_index() {
  merge_rank_.clear();
  merge_rank_.reserve(merges_.size());
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_.emplace(pair_key(merges_[r].left, merges_[r].right), static_cast<std::uint32_t>(r));
  }
}

void TokenizerModel::apply_merges(std::vector<TokenId>& symbols) const {
  if (merge_rank_.empty()) return;
  while (symbols.size() > 1) {
    std::uint32_t best = UINT32_MAX;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find(pair_key(symbols[i], symbols[i + 1]));
      if (it != merge_rank_.end() && it->second < best) best = it->second;
    }
    if (best == UINT32_MAX) break;
    const Merge& m = merges_[best];
    std::size_t w = 0;
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == m.left && symbols[i + 1] == m.right) {
        symbols[w++] = m.result;
        i += 2;
      } else {
        symbols[w++] = symbols[i++];
      }
    }
    symbols.resize(w);
  }
}

std::vector<TokenId> TokenizerModel::encode(std::string_view text, EncodeOptions opts) const {
  std::vector<TokenId> ids;
  std::unordered_map<std::string, std::vector<TokenId>> cache;
  const auto segments = pretokenize(text);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    switch (seg.kind) {
      case SegmentKind::space_run:
        ids.push_back(space_run_id(static_cast<int>(seg.bytes.size())));
        break;
      case SegmentKind::newline:
        ids.push_back(static_cast<TokenId>('\n'));
        break;
      default: {
        std::string symbols_text = (s == 0 && opts.at_string_start) ? " " + seg.bytes : seg.bytes;
        auto it = cache.find(symbols_text);
        if (it == cache.end()) {
          std::vector<TokenId> symbols;
          symbols.reserve(symbols_text.size());
          for (unsigned char c : symbols_text) symbols.push_back(static_cast<TokenId>(c));
          apply_merges(symbols);
          it = cache.emplace(std::move(symbols_text), std::move(symbols)).first;
        }
        ids.insert(ids.end(), it->second.begin(), it->second.end());
      }
    }
  }
  return ids;
}

std::string TokenizerModel::decode(std::span<const TokenId> ids, EncodeOptions opts) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  // A leading boundary-marked token carries the implicit string-start space.
  if (opts.at_string_start && !ids.empty() && !is_space_run(ids.front()) &&
      starts_with_space(vocab_[static_cast<std::size_t>(ids.front())])) {
    out.erase(0, 1);
  }
  return out;
}

void TokenizerModel::validate() const {
  if (vocab_.size() < kBaseVocab) throw ValidationError("vocabulary smaller than the byte + space-run base");
  for (std::size_t b = 0; b < kByteTokens; ++b) {
    if (vocab_[b].size() != 1 || static_cast<unsigned char>(vocab_[b][0]) != b) {
      throw ValidationError("id " + std::to_string(b) + " is not the byte token for that value");
    }
  }
  std::set<TokenId> seen_runs;
  for (int k = 1; k <= kMaxSpaceRun; ++k) {
    const TokenId id = space_runs_[static_cast<std::size_t>(k - 1)];
    if (id < static_cast<TokenId>(kByteTokens) || id >= id_bounds() ||
        vocab_[static_cast<std::size_t>(id)] != std::string(static_cast<std::size_t>(k), ' ')) {
      throw ValidationError("space-run token for length " + std::to_string(k) + " is missing");
    }
    if (!seen_runs.insert(id).second) throw ValidationError("space-run tokens are not distinct");
  }
  std::vector<bool> produced(vocab_.size(), false);
  for (std::size_t b = 0; b < kByteTokens; ++b) produced[b] = true;
  for (TokenId id : space_runs_) produced[static_cast<std::size_t>(id)] = true;
  for (TokenId id : reserved_) produced[static_cast<std::size_t>(id)] = true;
  for (const Merge& m : merges_) {
    if (m.result < 0 || m.result >= id_bounds()) {
      throw ValidationError("merge output " + std::to_string(m.result) + " not in vocabulary");
    }
    if (m.left < 0 || m.right < 0 || m.left >= m.result || m.right >= m.result ||
        !produced[static_cast<std::size_t>(m.left)] || !produced[static_cast<std::size_t>(m.right)]) {
      throw ValidationError("merge " + std::to_string(m.result) + " references a token not created before it");
    }
    if (produced[static_cast<std::size_t>(m.result)]) {
      throw ValidationError("token " + std::to_string(m.result) + " produced twice");
    }
    if (vocab_[static_cast<std::size_t>(m.result)] !=
        vocab_[static_cast<std::size_t>(m.left)] + vocab_[static_cast<std::size_t>(m.right)]) {
      throw ValidationError("merge " + std::to_string(m.result) + " bytes differ from its parts");
    }
    produced[static_cast<std::size_t>(m.result)] = true;
  }
  for (std::size_t id = 0; id < produced.size(); ++id) {
    if (!produced[id]) throw ValidationError("token " + std::to_string(id) + " has no origin");
  }
}

// ---------------------------------------------------------------------------
// Training

std::size_t min_vocab_size(std::size_t reserved_count) { return kBaseVocab + reserved_count; }

namespace {

struct Word {
  std::vector<TokenId> symbols;
  std::int64_t count;
};

using PairKey = std::uint64_t;

PairKey make_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}
TokenId key_left(PairKey k) { return static_cast<TokenId>(k >> 32); }
TokenId key_right(PairKey k) { return static_cast<TokenId>(k & 0xffffffffu); }

}  // namespace

BpeTrainResult train_bpe(std::span<const std::string> corpus, const BpeTrainOptions& opts) {
  if (corpus.empty()) throw ValidationError("train_bpe: corpus is empty");
  const std::size_t minimum = min_vocab_size(opts.reserved.size());
  if (opts.target_vocab < minimum) {
    throw ValidationError("train_bpe: target vocabulary " + std::to_string(opts.target_vocab) +
                          " below minimum " + std::to_string(minimum) +
                          " (256 bytes + 24 space runs + reserved)");
  }

  BpeTrainResult result{TokenizerModel::with_base_vocab(opts.reserved), {}};
  TokenizerModel& model = result.model;

  // Segment frequency table, in the symbol form encode() will see.
  std::map<std::string, std::int64_t> seg_counts;
  for (const std::string& doc : corpus) {
    const auto segs = pretokenize(doc);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const Segment& seg = segs[s];
      if (seg.kind == SegmentKind::space_run || seg.kind == SegmentKind::newline) continue;
      ++seg_counts[s == 0 ? " " + seg.bytes : seg.bytes];
    }
  }

  std::vector<Word> words;
  words.reserve(seg_counts.size());
  for (const auto& [text, count] : seg_counts) {
    Word w{{}, count};
    for (unsigned char c : text) w.symbols.push_back(static_cast<TokenId>(c));
    words.push_back(std::move(w));
  }

  std::unordered_map<PairKey, std::int64_t> pair_counts;
  std::unordered_map<PairKey, std::vector<std::uint32_t>> where;
  for (std::uint32_t wi = 0; wi < words.size(); ++wi) {
    const auto& sym = words[wi].symbols;
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
      const PairKey k = make_key(sym[i], sym[i + 1]);
      pair_counts[k] += words[wi].count;
      auto& list = where[k];
      if (list.empty() || list.back() != wi) list.push_back(wi);
    }
  }

  struct Entry {
    std::int64_t count;
    PairKey key;
  };
  const auto& vocab = model.vocab();
  // Max-heap on count; ties go to the lexicographically smaller byte pair.
  auto worse = [&vocab](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = vocab[static_cast<std::size_t>(key_left(a.key))];
    const auto& bl = vocab[static_cast<std::size_t>(key_left(b.key))];
    if (al != bl) return al > bl;
    return vocab[static_cast<std::size_t>(key_right(a.key))] > vocab[static_cast<std::size_t>(key_right(b.key))];
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (const auto& [k, c] : pair_counts) {
    if (c > 0) heap.push({c, k});
  }

  std::set<PairKey> touched;
  while (model.vocab_size() < opts.target_vocab) {
    Entry best{0, 0};
    bool found = false;
    while (!heap.empty()) {
      Entry top = heap.top();
      heap.pop();
      auto it = pair_counts.find(top.key);
      if (it != pair_counts.end() && it->second == top.count && top.count > 0) {
        best = top;
        found = true;
        break;
      }
    }
    if (!found) {
      result.warnings.push_back("no pairs left to merge; stopped at vocabulary size " +
                                std::to_string(model.vocab_size()) + " of " +
                                std::to_string(opts.target_vocab));
      break;
    }
    const TokenId left = key_left(best.key);
    const TokenId right = key_right(best.key);
    const TokenId merged = model.add_merge(left, right);

    auto affected = std::move(where[best.key]);
    where.erase(best.key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());

    touched.clear();
    for (std::uint32_t wi : affected) {
      Word& w = words[wi];
      auto& sym = w.symbols;
      bool hit = false;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        if (sym[i] == left && sym[i + 1] == right) {
          hit = true;
          break;
        }
      }
      if (!hit) continue;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        const PairKey k = make_key(sym[i], sym[i + 1]);
        pair_counts[k] -= w.count;
        touched.insert(k);
      }
      std::size_t out = 0;
      for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size() && sym[i] == left && sym[i + 1] == right) {
          sym[out++] = merged;
          i += 2;
        } else {
          sym[out++] = sym[i++];
        }
      }
      sym.resize(out);
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        const PairKey k = make_key(sym[i], sym[i + 1]);
        pair_counts[k] += w.count;
        touched.insert(k);
        auto& list = where[k];
        if (list.empty() || list.back() != wi) list.push_back(wi);
      }
    }
    for (PairKey k : touched) {
      auto it = pair_counts.find(k);
      if (it == pair_counts.end()) continue;
      if (it->second <= 0) {
        pair_counts.erase(it);
        where.erase(k);
      } else {
        heap.push({it->second, k});
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

std::string escape_bytes(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(bytes.size());
  for (unsigned char c : bytes) {
    if (c > 0x20 && c < 0x7F && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      out += "\\x";
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 0xF]);
    }
  }
  return out;
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string unescape_bytes(std::string_view escaped) {
  std::string out;
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    if (escaped[i] != '\\') {
      out.push_back(escaped[i]);
      continue;
    }
    if (i + 3 >= escaped.size() || escaped[i + 1] != 'x') throw ValidationError("bad escape sequence");
    const int hi = hex_value(escaped[i + 2]);
    const int lo = hex_value(escaped[i + 3]);
    if (hi < 0 || lo < 0) throw ValidationError("bad hex digit in escape sequence");
    out.push_back(static_cast<char>(hi * 16 + lo));
    i += 3;
  }
  return out;
}

std::string serialize_model(const TokenizerModel& model) {
  std::ostringstream os;
  os << "neox-tok v1 " << model.vocab_size() << '\n';
  for (std::size_t id = 0; id < model.vocab_size(); ++id) {
    os << id << '\t' << escape_bytes(model.vocab()[id]) << '\n';
  }
  os << "#MERGES\n";
  for (const Merge& m : model.merges()) os << m.left << ' ' << m.right << ' ' << m.result << '\n';
  return os.str();
}

namespace {

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ') ++j;
    if (j > i) parts.push_back(line.substr(i, j - i));
    i = j;
  }
  return parts;
}

}  // namespace

TokenizerModel parse_model(std::string_view text) {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= text.size();) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.empty()) throw ParseError("empty tokenizer file", 1);

  const auto header = split_spaces(lines[0]);
  std::size_t declared = 0;
  if (header.size() != 3 || header[0] != "neox-tok" || header[1] != "v1" || !parse_int(header[2], declared)) {
    throw ParseError("expected header 'neox-tok v1 <vocab_size>'", 1);
  }

  std::map<TokenId, std::string> entries;
  std::size_t ln = 1;
  for (; ln < lines.size() && lines[ln] != "#MERGES"; ++ln) {
    const auto line = lines[ln];
    const auto tab = line.find('\t');
    TokenId id = 0;
    if (tab == std::string_view::npos || !parse_int(line.substr(0, tab), id) || id < 0) {
      throw ParseError("expected '<id>\\t<bytes>'", ln + 1);
    }
    std::string bytes;
    try {
      bytes = unescape_bytes(line.substr(tab + 1));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), ln + 1);
    }
    if (bytes.empty()) throw ParseError("empty token", ln + 1);
    if (!entries.emplace(id, std::move(bytes)).second) {
      throw ParseError("duplicate id " + std::to_string(id), ln + 1);
    }
  }
  if (ln == lines.size()) throw ParseError("missing #MERGES delimiter", ln);

  struct RawMerge {
    TokenId left, right, result;
    std::size_t line;
  };
  std::vector<RawMerge> raw_merges;
  std::set<TokenId> merge_outputs;
  for (++ln; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto parts = split_spaces(lines[ln]);
    RawMerge m{0, 0, 0, ln + 1};
    if (parts.size() != 3 || !parse_int(parts[0], m.left) || !parse_int(parts[1], m.right) ||
        !parse_int(parts[2], m.result)) {
      throw ParseError("expected '<left_id> <right_id> <new_id>'", ln + 1);
    }
    raw_merges.push_back(m);
    merge_outputs.insert(m.result);
  }

  // Space-run tokens are the non-byte, non-merge entries made only of spaces.
  std::array<TokenId, kMaxSpaceRun> runs{};
  runs.fill(-1);
  for (const auto& [id, bytes] : entries) {
    if (id < static_cast<TokenId>(kByteTokens) || merge_outputs.count(id)) continue;
    if (bytes.size() <= kMaxSpaceRun && bytes.find_first_not_of(' ') == std::string::npos) {
      runs[bytes.size() - 1] = id;
    }
  }
  std::string missing;
  for (int k = 1; k <= kMaxSpaceRun; ++k) {
    if (runs[static_cast<std::size_t>(k - 1)] < 0) missing += (missing.empty() ? "" : ", ") + std::to_string(k);
  }
  if (!missing.empty()) throw ValidationError("tokenizer file is missing space-run tokens for run lengths: " + missing);

  if (entries.size() != declared) {
    throw ParseError("header declares " + std::to_string(declared) + " entries but file has " +
                         std::to_string(entries.size()),
                     1);
  }
  TokenId expect = 0;
  for (const auto& [id, bytes] : entries) {
    if (id != expect) throw ValidationError("vocabulary ids are not dense: missing id " + std::to_string(expect));
    ++expect;
  }

  TokenizerModel model;
  for (auto& [id, bytes] : entries) model.vocab_.push_back(std::move(bytes));
  model.space_runs_ = runs;
  for (std::size_t id = kByteTokens; id < model.vocab_.size(); ++id) {
    const auto tid = static_cast<TokenId>(id);
    if (!merge_outputs.count(tid) && !model.is_space_run(tid)) model.reserved_.push_back(tid);
  }
  for (const RawMerge& m : raw_merges) {
    const auto bound = model.id_bounds();
    if (m.left < 0 || m.right < 0 || m.result < 0 || m.left >= bound || m.right >= bound || m.result >= bound) {
      throw ParseError("merge references unknown token", m.line);
    }
    if (m.left >= m.result || m.right >= m.result) {
      throw ParseError("merge references a token created after it", m.line);
    }
    if (model.vocab_[static_cast<std::size_t>(m.result)] !=
        model.vocab_[static_cast<std::size_t>(m.left)] + model.vocab_[static_cast<std::size_t>(m.right)]) {
      throw ParseError("merge output bytes differ from the concatenation of its inputs", m.line);
    }
    model.merges_.push_back({m.left, m.right, m.result});
  }
  model.rebuild_index();
  model.validate();
  return model;
}

void save_model(const TokenizerModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out << serialize_model(model);
  if (!out) throw RuntimeError("failed writing " + path.string());
}

TokenizerModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace neox::tok
