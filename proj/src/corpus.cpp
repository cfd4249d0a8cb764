#include "neox/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "neox/error.hpp"

namespace neox {

std::vector<std::string> read_documents(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + file.string());
  std::vector<std::string> docs;
  if (file.extension() == ".jsonl") {
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(file.string() + ": " + e.what(), ln);
      }
      if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
        throw ParseError(file.string() + ": record has no string 'text' field", ln);
      }
      docs.push_back(rec["text"].get<std::string>());
    }
  } else {
    std::ostringstream ss;
    ss << in.rdbuf();
    docs.push_back(ss.str());
  }
  return docs;
}

std::vector<std::string> read_document_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::string> docs;
  for (const auto& f : files) {
    auto d = read_documents(f);
    docs.insert(docs.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
  }
  return docs;
}

std::vector<CorpusComponent> read_corpus_dir(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw ValidationError(root.string() + " is not a directory");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<CorpusComponent> out;
  for (const auto& d : dirs) out.push_back({d.filename().string(), read_document_dir(d)});
  if (out.empty()) throw ValidationError(root.string() + " has no component subdirectories");
  return out;
}

namespace {

constexpr std::array kSubjects{"the model", "a researcher", "the tokenizer", "our team", "the optimizer",
                               "every layer", "the dataset", "a small network", "the cluster", "each node"};
constexpr std::array kVerbs{"computes", "reads", "updates", "measures", "compresses",
                            "learns", "predicts", "stores", "rotates", "averages"};
constexpr std::array kObjects{"the gradient", "many tokens", "a long sequence", "the attention scores",
                              "the learning rate", "its parameters", "the validation loss",
                              "a rotary embedding", "the residual stream", "twelve servers"};
constexpr std::array kTails{"quickly", "in parallel", "at every step", "without error", "for each batch",
                            "during training", "on the first pass", "with care"};
constexpr std::array kIdents{"fib", "rotate", "update", "loss", "step", "merge", "encode", "reduce"};

}  // namespace

std::vector<std::string> synthetic_documents(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const auto& arr) { return arr[rng() % arr.size()]; };
  std::vector<std::string> docs;
  docs.reserve(count);
  for (std::size_t d = 0; d < count; ++d) {
    std::string doc;
    const std::size_t sentences = 3 + rng() % 5;
    for (std::size_t s = 0; s < sentences; ++s) {
      std::string sent = pick(kSubjects);
      sent[0] = static_cast<char>(sent[0] - 'a' + 'A');
      doc += sent;
      doc += ' ';
      doc += pick(kVerbs);
      doc += ' ';
      doc += pick(kObjects);
      if (rng() % 2) {
        doc += ' ';
        doc += pick(kTails);
      }
      doc += ". ";
    }
    if (rng() % 3 == 0) {
      const std::string name = pick(kIdents);
      doc += "\ndef " + name + "(n):\n    if n < 2:\n        return n\n    return " + name + "(n - 1) + " + name +
             "(n - 2)\n";
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace neox
