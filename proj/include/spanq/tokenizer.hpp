// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "spanq/span_ast.hpp"

namespace spanq {

using TokenId = int32_t;

enum class TokenKind : uint8_t { Content, Pad, Open, Sep, Close };
enum class Role : uint8_t { None, System, User, Assistant, Fragment };

std::string_view kind_name(TokenKind kind);

struct Token {
  TokenId id = 0;
  TokenKind kind = TokenKind::Content;
  Role role = Role::None;
  /// Close tokens only: index of the opening token of the plus region.
  std::optional<uint32_t> back_ptr;

  bool special() const {
    return kind == TokenKind::Open || kind == TokenKind::Sep || kind == TokenKind::Close;
  }
  bool operator==(const Token&) const = default;
};

/// The number a close token carries on the wire: the length of the plus
/// region it terminates, both parentheses included. The region start is
/// `close_index - encoded + 1`.
uint32_t encoded_region_length(const Token& close, uint32_t close_index);

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic whitespace-word vocabulary. Words hash into the content id
/// range; a word spelled `#<n>` denotes content id n verbatim, which is how
/// generated tokens round-trip through message text.
class MockVocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kOpen = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kClose = 3;
  static constexpr TokenId kFirstContent = 16;

  explicit MockVocab(uint32_t size = 1u << 20);

  uint32_t size() const { return size_; }
  bool is_special(TokenId id) const { return id >= 0 && id < kFirstContent; }

  TokenId id_of(std::string_view word) const;
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  uint32_t size_;
};

/// A plus-region child as laid out in the token sequence: `start` is the
/// index of its opening `(` or `)(` token and `end` the index of the
/// following `)(` or `)` token.
struct SpanRange {
  uint32_t start = 0;
  uint32_t end = 0;
  uint32_t depth = 0;
  bool operator==(const SpanRange&) const = default;
};

struct SpanEntry {
  SpanRange range;
  NodePath path;  // path of the plus child in the query
};

struct TokenizedQuery {
  std::vector<Token> tokens;
  uint32_t block_size = 16;
  std::vector<SpanEntry> spans;  // ordered by start
  std::optional<GenParams> generate_tail;

  std::vector<TokenId> ids() const;
  std::vector<SpanRange> span_ranges() const;
};

class TokenizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Generated outputs keyed by the G node that produced them.
using OutputMap = std::unordered_map<NodeId, std::vector<TokenId>>;

struct TokenizeOptions {
  /// Emit span parenthesization for plus regions. When false, plus joins
  /// serialize like plain concatenation (a stock server's view).
  bool emit_spans = true;
  /// Two-special-token encoding: sibling boundaries reuse the `(` id.
  bool compact_specials = false;
  /// Outputs of already-executed generates, spliced where they are used.
  const OutputMap* outputs = nullptr;
};

/// Depth-first serialization of an optimized query. The root G becomes
/// the generate tail and its input is serialized. Throws TokenizeError for
/// queries still holding C or R nodes, VocabError on out-of-range literals.
TokenizedQuery tokenize_query(const SpanQuery& query, const MockVocab& vocab,
                              uint32_t block_size, const TokenizeOptions& options = {});

/// Serializes the standalone request that materializes one span: `node`
/// is a Span(G[x]) or G1[x]; the result is `(` x [output], unaligned.
TokenizedQuery tokenize_span_request(const SpanQuery& query, NodeId node,
                                     const MockVocab& vocab, uint32_t block_size,
                                     const TokenizeOptions& options = {});

/// Inserts pad tokens so every special token starts a block. Span table and
/// back pointers are re-indexed.
TokenizedQuery align_blocks(const TokenizedQuery& tq);

struct CropResult {
  std::vector<TokenId> kept;
  size_t dropped = 0;
  std::optional<std::string> warning;
};

/// Truncates a generated span output so that the span, measured from a
/// block-aligned start, ends on a block boundary. `prefix_in_span` is the
/// number of span tokens preceding the output (the `(` and the input).
CropResult crop_trailing_partial(std::span<const TokenId> output, uint32_t block_size,
                                 size_t prefix_in_span = 0);

/// Rebuilds the span table from the first token of each block of an
/// aligned sequence. Throws TokenizeError for unbalanced or misaligned
/// boundaries.
std::vector<SpanRange> parse_spans(std::span<const Token> tokens, uint32_t block_size);

/// Golden-file listing, one token per line: `index kind id [back_ptr]`.
std::string format_listing(const TokenizedQuery& tq);

/// Content tokens only, in order (pads and boundaries dropped).
std::vector<TokenId> content_ids(std::span<const Token> tokens);

}  // namespace spanq
