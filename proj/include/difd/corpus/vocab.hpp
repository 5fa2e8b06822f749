#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "difd/corpus/instance.hpp"
#include "difd/error.hpp"
#include "difd/ndgrad/tensor.hpp"

namespace difd::corpus {

/// Token <-> id map. Ids are contiguous; 0 is padding and 1 is the unknown word.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary() : words_{"<pad>", "<unk>"} {
    index_.emplace(words_[0], kPad);
    index_.emplace(words_[1], kUnk);
  }

  static Vocabulary from_words(const std::vector<std::string>& words) {
    if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>") {
      fail(ErrorKind::data, "vocabulary must start with <pad>, <unk>");
    }
    Vocabulary v;
    for (std::size_t i = 2; i < words.size(); ++i) {
      if (v.index_.count(words[i])) fail(ErrorKind::data, "duplicate vocabulary word '" + words[i] + "'");
      v.add(words[i]);
    }
    return v;
  }

  std::size_t add(const std::string& word) {
    auto [it, inserted] = index_.emplace(word, words_.size());
    if (inserted) words_.push_back(word);
    return it->second;
  }

  std::size_t id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EmbeddingInit {
  Vocabulary vocab;
  ndgrad::Tensor table;
  std::size_t found = 0;
  std::size_t duplicate_lines = 0;

  /// Fraction of real words (excluding <pad>/<unk>) that had a pretrained vector.
  double coverage() const {
    const std::size_t real = vocab.size() - 2;
    return real ? static_cast<double>(found) / static_cast<double>(real) : 0.0;
  }
};

/// Vocabulary over the given instances in first-appearance order, plus an
/// embedding table: pretrained vectors where the file has them, uniform
/// [-0.1, 0.1] elsewhere, and an all-zero padding row.
inline EmbeddingInit build_vocab_and_embeddings(const std::vector<Instance>& instances,
                                                const std::optional<std::filesystem::path>& embedding_file,
                                                std::size_t d_e, std::uint64_t seed) {
  if (d_e == 0) fail(ErrorKind::usage, "embedding dimension must be positive");
  EmbeddingInit init;
  for (const auto& inst : instances) {
    for (const auto& t : inst.tokens) init.vocab.add(t);
  }

  init.table = ndgrad::Tensor(ndgrad::Shape{init.vocab.size(), d_e});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  for (std::size_t r = 1; r < init.vocab.size(); ++r) {
    for (std::size_t c = 0; c < d_e; ++c) init.table(r, c) = dist(rng);
  }

  if (embedding_file) {
    std::ifstream in(*embedding_file);
    if (!in) fail(ErrorKind::data, "cannot open embedding file " + embedding_file->string());
    std::vector<char> seen(init.vocab.size(), 0);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::istringstream fields(line);
      std::string word;
      if (!(fields >> word)) continue;
      std::vector<double> vec;
      double x = 0.0;
      while (fields >> x) vec.push_back(x);
      if (vec.size() != d_e) {
        fail(ErrorKind::data, embedding_file->string() + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(d_e) + " values, got " + std::to_string(vec.size()));
      }
      if (!init.vocab.contains(word)) continue;
      const std::size_t id = init.vocab.id(word);
      if (id == Vocabulary::kPad) continue;
      if (seen[id]) {
        ++init.duplicate_lines;
        continue;
      }
      seen[id] = 1;
      if (id != Vocabulary::kUnk) ++init.found;
      for (std::size_t c = 0; c < d_e; ++c) init.table(id, c) = vec[c];
    }
  }
  return init;
}

}  // namespace difd::corpus
