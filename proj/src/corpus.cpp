// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/corpus.hpp"

#include <algorithm>
#include <sstream>

namespace spanq {

namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

std::vector<std::string> distinct(std::vector<std::string> words) {
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  return words;
}

}  // namespace

Corpus Corpus::from_documents(const std::vector<std::string>& documents, uint32_t fragment_words) {
  if (fragment_words == 0) throw std::invalid_argument("fragment length must be >= 1");
  Corpus c;
  for (uint32_t d = 0; d < documents.size(); ++d) {
    std::vector<std::string> words = words_of(documents[d]);
    for (size_t start = 0; start < words.size(); start += fragment_words) {
      size_t end = std::min(words.size(), start + fragment_words);
      Fragment f;
      f.id = static_cast<uint32_t>(c.fragments_.size());
      f.document = d;
      f.words = static_cast<uint32_t>(end - start);
      for (size_t i = start; i < end; ++i) {
        if (i > start) f.text += ' ';
        f.text += words[i];
      }
      c.vocab_.push_back(distinct({words.begin() + static_cast<ptrdiff_t>(start),
                                   words.begin() + static_cast<ptrdiff_t>(end)}));
      c.fragments_.push_back(std::move(f));
    }
  }
  return c;
}

std::vector<uint32_t> Corpus::top_k(const std::string& query, uint32_t k) const {
  const std::vector<std::string> q = distinct(words_of(query));
  std::vector<std::pair<size_t, uint32_t>> scored;  // (score, id)
  for (const auto& f : fragments_) {
    const auto& v = vocab_[f.id];
    size_t score = 0;
    for (const auto& w : q) score += std::binary_search(v.begin(), v.end(), w);
    if (score > 0) scored.emplace_back(score, f.id);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<uint32_t> out;
  for (size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].second);
  return out;
}

void CorpusRegistry::add(const std::string& name, Corpus corpus) {
  corpora_.insert_or_assign(name, std::move(corpus));
}

const Corpus& CorpusRegistry::get(const std::string& name) const { return corpora_.at(name); }

Retriever CorpusRegistry::retriever() const {
  return [this](const RetrievalSpec& spec) {
    auto it = corpora_.find(spec.corpus);
    if (it == corpora_.end()) throw RetrievalError("unknown corpus", spec);
    std::vector<std::string> texts;
    for (uint32_t id : it->second.top_k(spec.query, spec.k)) {
      texts.push_back(it->second.fragment(id).text);
    }
    return texts;
  };
}

}  // namespace spanq
