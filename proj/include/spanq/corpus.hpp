// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spanq/optimizer.hpp"

namespace spanq {

struct Fragment {
  uint32_t id = 0;
  uint32_t document = 0;
  std::string text;
  uint32_t words = 0;
};

/// Documents cut into contiguous segments of at most `fragment_words`
/// whitespace words. Fragment ids run in document order.
class Corpus {
 public:
  static Corpus from_documents(const std::vector<std::string>& documents,
                               uint32_t fragment_words = 100);

  const std::vector<Fragment>& fragments() const { return fragments_; }
  const Fragment& fragment(uint32_t id) const { return fragments_.at(id); }

  /// Top-k fragments by the number of distinct query words they contain;
  /// ties go to the lower fragment id. Fragments sharing no word are never
  /// returned.
  std::vector<uint32_t> top_k(const std::string& query, uint32_t k) const;

 private:
  std::vector<Fragment> fragments_;
  std::vector<std::vector<std::string>> vocab_;  // sorted distinct words per fragment
};

/// Named corpora behind the optimizer's retrieval hook.
class CorpusRegistry {
 public:
  void add(const std::string& name, Corpus corpus);
  const Corpus& get(const std::string& name) const;  // throws std::out_of_range

  /// Resolves R nodes. Unknown corpora raise RetrievalError.
  Retriever retriever() const;

 private:
  std::map<std::string, Corpus> corpora_;
};

}  // namespace spanq
