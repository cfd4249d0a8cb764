#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace neox {

struct CorpusComponent {
  std::string name;
  std::vector<std::string> documents;
};

// Reads documents from a file. `.jsonl` files hold one JSON record per line
// with a `text` field; anything else is read whole as a single document.
std::vector<std::string> read_documents(const std::filesystem::path& file);

// Reads every regular file under `dir` (sorted by path) as documents.
std::vector<std::string> read_document_dir(const std::filesystem::path& dir);

// One component per immediate subdirectory of `root`, sorted by name.
// Component names must be unique, which the filesystem already guarantees.
std::vector<CorpusComponent> read_corpus_dir(const std::filesystem::path& root);

// Deterministic English-like text for desk-scale experiments: sentences from
// a small grammar, interleaved with indented code blocks so whitespace runs
// appear. Same seed, same output.
std::vector<std::string> synthetic_documents(std::size_t count, std::uint64_t seed);

}  // namespace neox
