// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#include "spanq/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

namespace spanq {

namespace {

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Role role_of(Op op) {
  switch (op) {
    case Op::System: return Role::System;
    case Op::User: return Role::User;
    case Op::Assistant: return Role::Assistant;
    case Op::Fragment: return Role::Fragment;
    default: return Role::None;
  }
}

class Serializer {
 public:
  Serializer(const SpanQuery& q, const MockVocab& vocab, uint32_t block_size,
             const TokenizeOptions& options)
      : q_(q), vocab_(vocab), options_(options) {
    if (block_size == 0) throw TokenizeError("block size must be >= 1");
    out_.block_size = block_size;
    for (NodeId id : q.preorder()) {
      Op op = q.node(id).op;
      if (op == Op::Chat || op == Op::Retrieve) {
        throw TokenizeError("query still contains " + std::string(op_name(op)) +
                            " nodes; run optimize first");
      }
    }
  }

  TokenizedQuery query() && {
    NodeId root = q_.root();
    if (root == kNoNode) return std::move(out_);
    const Node& n = q_.node(root);
    NodePath path;
    if (n.op == Op::Generate) {
      out_.generate_tail = n.gen.value_or(GenParams{});
      emit_children(root, path, 0);
    } else {
      emit(root, path, 0);
    }
    return std::move(out_);
  }

  TokenizedQuery span_request(NodeId id) && {
    const Node& n = q_.node(id);
    if (n.op != Op::Span && n.op != Op::Prepare) {
      throw TokenizeError("span request needs a Span or G1 node");
    }
    NodeId gen = n.op == Op::Span ? n.children.at(0) : id;
    out_.spans.push_back({{0, 0, 1}, {}});
    emit_special(TokenKind::Open, std::nullopt);
    NodePath path;
    emit_children(gen, path, 1);
    emit_output(gen);
    out_.spans[0].range.end = static_cast<uint32_t>(out_.tokens.size());
    out_.generate_tail = q_.node(gen).gen.value_or(GenParams{});
    return std::move(out_);
  }

 private:
  uint32_t here() const { return static_cast<uint32_t>(out_.tokens.size()); }

  void emit_special(TokenKind kind, std::optional<uint32_t> back_ptr) {
    TokenId id = kind == TokenKind::Open    ? MockVocab::kOpen
                 : kind == TokenKind::Close ? MockVocab::kClose
                 : options_.compact_specials ? MockVocab::kOpen
                                             : MockVocab::kSep;
    out_.tokens.push_back({id, kind, Role::None, back_ptr});
  }

  void emit_ids(const std::vector<TokenId>& ids, Role role) {
    for (TokenId t : ids) out_.tokens.push_back({t, TokenKind::Content, role, std::nullopt});
  }

  void emit_output(NodeId gen) {
    if (!options_.outputs) return;
    auto it = options_.outputs->find(gen);
    if (it != options_.outputs->end()) emit_ids(it->second, Role::Assistant);
  }

  void emit_children(NodeId id, NodePath& path, uint32_t depth) {
    const auto& kids = q_.node(id).children;
    for (uint32_t i = 0; i < kids.size(); ++i) {
      path.push_back(i);
      emit(kids[i], path, depth);
      path.pop_back();
    }
  }

  void emit(NodeId id, NodePath& path, uint32_t depth) {
    const Node& n = q_.node(id);
    switch (n.op) {
      case Op::System:
      case Op::User:
      case Op::Assistant:
      case Op::Fragment:
        emit_ids(vocab_.encode(n.content), role_of(n.op));
        return;
      case Op::Join:
      case Op::Prepare:
        emit_children(id, path, depth);
        return;
      case Op::Span: {
        NodeId gen = n.children.at(0);
        path.push_back(0);
        emit_children(gen, path, depth);
        path.pop_back();
        emit_output(gen);
        return;
      }
      case Op::Generate:
        // Unmarked nested generation: only the output flows to the parent.
        emit_output(id);
        return;
      case Op::Plus:
        if (!options_.emit_spans) {
          emit_children(id, path, depth);
        } else {
          emit_region(id, path, depth + 1);
        }
        return;
      case Op::Chat:
      case Op::Retrieve:
        break;
    }
    throw TokenizeError("unexpected sugar node");
  }

  void emit_region(NodeId plus, NodePath& path, uint32_t depth) {
    const uint32_t region_start = here();
    const auto& kids = q_.node(plus).children;
    size_t previous = SIZE_MAX;
    for (uint32_t i = 0; i < kids.size(); ++i) {
      if (previous != SIZE_MAX) out_.spans[previous].range.end = here();
      emit_special(i == 0 ? TokenKind::Open : TokenKind::Sep, std::nullopt);
      path.push_back(i);
      previous = out_.spans.size();
      out_.spans.push_back({{here() - 1, 0, depth}, path});
      emit(kids[i], path, depth);
      path.pop_back();
    }
    if (previous != SIZE_MAX) out_.spans[previous].range.end = here();
    emit_special(TokenKind::Close, region_start);
  }

  const SpanQuery& q_;
  const MockVocab& vocab_;
  const TokenizeOptions& options_;
  TokenizedQuery out_;
};

}  // namespace

std::string_view kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::Content: return "content";
    case TokenKind::Pad: return "pad";
    case TokenKind::Open: return "open";
    case TokenKind::Sep: return "sep";
    case TokenKind::Close: return "close";
  }
  return "?";
}

uint32_t encoded_region_length(const Token& close, uint32_t close_index) {
  if (close.kind != TokenKind::Close || !close.back_ptr) {
    throw TokenizeError("not a close token");
  }
  return close_index - *close.back_ptr + 1;
}

MockVocab::MockVocab(uint32_t size) : size_(size) {
  if (size <= static_cast<uint32_t>(kFirstContent)) {
    throw VocabError("vocabulary too small for reserved ids");
  }
}

TokenId MockVocab::id_of(std::string_view word) const {
  if (word.size() > 1 && word[0] == '#' &&
      std::all_of(word.begin() + 1, word.end(),
                  [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    uint64_t n = 0;
    auto [ptr, ec] = std::from_chars(word.data() + 1, word.data() + word.size(), n);
    if (ec != std::errc() || n >= size_) {
      throw VocabError("vocab overflow: token literal " + std::string(word) +
                       " outside vocabulary of " + std::to_string(size_));
    }
    if (n < static_cast<uint64_t>(kFirstContent)) {
      throw VocabError("token literal " + std::string(word) + " names a reserved id");
    }
    return static_cast<TokenId>(n);
  }
  uint64_t span = size_ - static_cast<uint32_t>(kFirstContent);
  return static_cast<TokenId>(kFirstContent + fnv1a(word) % span);
}

std::vector<TokenId> MockVocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) ids.push_back(id_of(text.substr(start, i - start)));
  }
  return ids;
}

std::string MockVocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (!out.empty()) out += ' ';
    out += '#';
    out += std::to_string(t);
  }
  return out;
}

std::vector<TokenId> TokenizedQuery::ids() const {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.id);
  return out;
}

std::vector<SpanRange> TokenizedQuery::span_ranges() const {
  std::vector<SpanRange> out;
  out.reserve(spans.size());
  for (const auto& s : spans) out.push_back(s.range);
  return out;
}

TokenizedQuery tokenize_query(const SpanQuery& query, const MockVocab& vocab,
                              uint32_t block_size, const TokenizeOptions& options) {
  return Serializer(query, vocab, block_size, options).query();
}

TokenizedQuery tokenize_span_request(const SpanQuery& query, NodeId node,
                                     const MockVocab& vocab, uint32_t block_size,
                                     const TokenizeOptions& options) {
  return Serializer(query, vocab, block_size, options).span_request(node);
}

TokenizedQuery align_blocks(const TokenizedQuery& tq) {
  const uint32_t bs = tq.block_size;
  TokenizedQuery out;
  out.block_size = bs;
  out.generate_tail = tq.generate_tail;
  out.tokens.reserve(tq.tokens.size() + tq.tokens.size() / 2);
  std::vector<uint32_t> remap(tq.tokens.size() + 1);
  for (size_t i = 0; i < tq.tokens.size(); ++i) {
    const Token& t = tq.tokens[i];
    if (t.special()) {
      while (out.tokens.size() % bs != 0) {
        out.tokens.push_back({MockVocab::kPad, TokenKind::Pad, Role::None, std::nullopt});
      }
    }
    remap[i] = static_cast<uint32_t>(out.tokens.size());
    out.tokens.push_back(t);
  }
  remap[tq.tokens.size()] = static_cast<uint32_t>(out.tokens.size());
  for (auto& t : out.tokens) {
    if (t.back_ptr) t.back_ptr = remap[*t.back_ptr];
  }
  out.spans = tq.spans;
  for (auto& s : out.spans) {
    s.range.start = remap[s.range.start];
    s.range.end = remap[s.range.end];
  }
  return out;
}

CropResult crop_trailing_partial(std::span<const TokenId> output, uint32_t block_size,
                                 size_t prefix_in_span) {
  if (block_size == 0) throw TokenizeError("block size must be >= 1");
  CropResult r;
  size_t total = prefix_in_span + output.size();
  size_t aligned_total = total / block_size * block_size;
  size_t keep = aligned_total > prefix_in_span ? aligned_total - prefix_in_span : 0;
  keep = std::min(keep, output.size());
  r.kept.assign(output.begin(), output.begin() + static_cast<ptrdiff_t>(keep));
  r.dropped = output.size() - keep;
  if (keep == 0 && !output.empty()) {
    r.warning = "generated span output of " + std::to_string(output.size()) +
                " tokens does not reach a block boundary (block size " +
                std::to_string(block_size) + "); cropped to empty";
  }
  return r;
}

std::vector<SpanRange> parse_spans(std::span<const Token> tokens, uint32_t block_size) {
  if (block_size == 0) throw TokenizeError("block size must be >= 1");
  auto is_boundary_id = [](TokenId id) {
    return id == MockVocab::kOpen || id == MockVocab::kSep || id == MockVocab::kClose;
  };
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (is_boundary_id(tokens[i].id) && i % block_size != 0) {
      throw TokenizeError("misaligned span boundary at index " + std::to_string(i));
    }
  }

  // Region starts come from the close tokens' back pointers; with them a
  // reused `(` id is unambiguous: it opens a region only where one begins.
  std::set<uint32_t> region_starts;
  for (size_t i = 0; i < tokens.size(); i += block_size) {
    const Token& t = tokens[i];
    if (t.id != MockVocab::kClose) continue;
    if (!t.back_ptr || *t.back_ptr >= i) {
      throw TokenizeError("close token at " + std::to_string(i) + " lacks a valid back pointer");
    }
    uint32_t start = *t.back_ptr;
    if (start % block_size != 0 || tokens[start].id != MockVocab::kOpen) {
      throw TokenizeError("back pointer at " + std::to_string(i) +
                          " does not reference an open token");
    }
    region_starts.insert(start);
  }

  struct Frame {
    uint32_t region_start;
    uint32_t span_start;
  };
  std::vector<Frame> stack;
  std::vector<SpanRange> spans;
  auto close_span = [&](uint32_t at) {
    spans.push_back({stack.back().span_start, at, static_cast<uint32_t>(stack.size())});
  };
  for (size_t i = 0; i < tokens.size(); i += block_size) {
    const Token& t = tokens[i];
    auto at = static_cast<uint32_t>(i);
    if (t.id == MockVocab::kOpen && region_starts.count(at)) {
      stack.push_back({at, at});
    } else if (t.id == MockVocab::kOpen || t.id == MockVocab::kSep) {
      if (stack.empty()) {
        throw TokenizeError("unbalanced span boundary: sibling separator outside a region at " +
                            std::to_string(i));
      }
      close_span(at);
      stack.back().span_start = at;
    } else if (t.id == MockVocab::kClose) {
      if (stack.empty()) {
        throw TokenizeError("unbalanced span boundary: close without open at " + std::to_string(i));
      }
      if (stack.back().region_start != *t.back_ptr) {
        throw TokenizeError("improperly nested region closed at " + std::to_string(i));
      }
      close_span(at);
      stack.pop_back();
    }
  }
  if (!stack.empty()) throw TokenizeError("unbalanced span boundary: unterminated region");
  std::sort(spans.begin(), spans.end(),
            [](const SpanRange& a, const SpanRange& b) { return a.start < b.start; });
  return spans;
}

std::string format_listing(const TokenizedQuery& tq) {
  std::string out;
  for (size_t i = 0; i < tq.tokens.size(); ++i) {
    const Token& t = tq.tokens[i];
    out += std::to_string(i);
    out += ' ';
    out += kind_name(t.kind);
    out += ' ';
    out += std::to_string(t.id);
    if (t.back_ptr) {
      out += ' ';
      out += std::to_string(*t.back_ptr);
    }
    out += '\n';
  }
  return out;
}

std::vector<TokenId> content_ids(std::span<const Token> tokens) {
  std::vector<TokenId> out;
  for (const auto& t : tokens) {
    if (t.kind == TokenKind::Content) out.push_back(t.id);
  }
  return out;
}

}  // namespace spanq
