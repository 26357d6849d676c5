// Copyright 2026 The spanq Authors.
// SPDX-License-Identifier: Apache-2.0

// S-expression exchange format and DOT rendering for span queries.

#include <cctype>
#include <charconv>
#include <string>
#include <unordered_map>

#include "spanq/span_ast.hpp"

namespace spanq {

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  SpanQuery run() {
    SpanQuery q;
    skip_ws();
    if (at_end()) throw ParseError("empty input", pos_);
    NodeId root = parse_expr(q);
    skip_ws();
    if (!at_end()) throw ParseError("unexpected trailing input", pos_);
    q.set_root(root);
    q.compact();
    return q;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  void skip_ws() {
    while (!at_end()) {
      char c = peek();
      if (c == ';') {  // comment to end of line
        while (!at_end() && peek() != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  static bool is_atom_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
           c == '.' || c == '+' || c == ':' || c == '/';
  }

  std::string_view atom() {
    size_t start = pos_;
    while (!at_end() && is_atom_char(peek())) ++pos_;
    if (start == pos_) throw ParseError("expected a name", pos_);
    return text_.substr(start, pos_ - start);
  }

  std::string string_literal() {
    size_t start = pos_;
    ++pos_;  // opening quote
    std::string out;
    while (true) {
      if (at_end()) throw ParseError("unterminated string", start);
      char c = text_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (at_end()) throw ParseError("unterminated string", start);
        char e = text_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: throw ParseError("unknown escape", pos_ - 1);
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  template <typename T>
  T number(std::string_view value, size_t at) {
    T out{};
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      throw ParseError("bad number '" + std::string(value) + "'", at);
    }
    return out;
  }

  std::string attr_value() {
    if (!at_end() && peek() == '"') return string_literal();
    return std::string(atom());
  }

  NodeId parse_expr(SpanQuery& q) {
    size_t open_at = pos_;
    if (at_end() || peek() != '(') throw ParseError("expected '('", pos_);
    ++pos_;
    skip_ws();
    size_t name_at = pos_;
    std::string_view name = atom();
    auto op = op_from_name(name);
    if (!op) throw ParseError("unknown operator '" + std::string(name) + "'", name_at);

    Node n;
    n.op = *op;
    if (*op == Op::Chat || is_generate(*op)) n.gen = GenParams{};
    if (*op == Op::Prepare) n.gen->max_tokens = 1;
    if (*op == Op::Retrieve) n.retrieval = RetrievalSpec{};
    bool have_text = false;

    while (true) {
      skip_ws();
      if (at_end()) throw ParseError("unbalanced parenthesis", open_at);
      char c = peek();
      if (c == ')') {
        ++pos_;
        break;
      }
      if (c == '(') {
        n.children.push_back(parse_expr(q));
        continue;
      }
      if (c == '"') {
        size_t at = pos_;
        if (have_text) throw ParseError("duplicate text literal", at);
        have_text = true;
        std::string s = string_literal();
        if (*op == Op::Retrieve) {
          n.retrieval->query = std::move(s);
        } else if (is_message(*op)) {
          n.content = std::move(s);
        } else {
          throw ParseError("operator '" + std::string(name) + "' takes no text", at);
        }
        continue;
      }
      size_t key_at = pos_;
      std::string key(atom());
      if (at_end() || peek() != '=') throw ParseError("expected '=' after '" + key + "'", pos_);
      ++pos_;
      size_t value_at = pos_;
      std::string value = attr_value();
      apply_attr(n, key, value, key_at, value_at);
    }
    return q.add(std::move(n));
  }

  void apply_attr(Node& n, const std::string& key, const std::string& value,
                  size_t key_at, size_t value_at) {
    if (n.gen && key == "max_tokens") {
      n.gen->max_tokens = number<uint32_t>(value, value_at);
    } else if (n.gen && key == "temperature") {
      n.gen->temperature = number<double>(value, value_at);
    } else if (n.gen && key == "seed") {
      n.gen->seed = number<int64_t>(value, value_at);
    } else if (n.retrieval && key == "corpus") {
      n.retrieval->corpus = value;
    } else if (n.retrieval && key == "k") {
      n.retrieval->k = number<uint32_t>(value, value_at);
    } else {
      throw ParseError("unknown attribute '" + key + "'", key_at);
    }
  }

  std::string_view text_;
  size_t pos_ = 0;
};

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  out += '"';
  return out;
}

bool plain_atom(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
      return false;
    }
  }
  return true;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void render_sexpr(const SpanQuery& q, NodeId id, std::string& out) {
  const Node& n = q.node(id);
  out += '(';
  out += op_name(n.op);
  if (n.gen) {
    if (n.gen->max_tokens && n.op != Op::Prepare) {
      out += " max_tokens=" + std::to_string(*n.gen->max_tokens);
    }
    if (n.gen->temperature != 0.0) out += " temperature=" + format_double(n.gen->temperature);
    if (n.gen->seed != 0) out += " seed=" + std::to_string(n.gen->seed);
  }
  if (n.retrieval) {
    const auto& r = *n.retrieval;
    out += " corpus=" + (plain_atom(r.corpus) ? r.corpus : quote(r.corpus));
    out += " k=" + std::to_string(r.k);
    out += ' ';
    out += quote(r.query);
  }
  if (is_message(n.op)) {
    out += ' ';
    out += quote(n.content);
  }
  for (NodeId c : n.children) {
    out += ' ';
    render_sexpr(q, c, out);
  }
  out += ')';
}

std::string render_dot(const SpanQuery& q) {
  std::string out = "digraph spanq {\n  node [shape=box];\n";
  std::vector<NodeId> order = q.preorder();
  std::unordered_map<NodeId, size_t> index;
  for (size_t i = 0; i < order.size(); ++i) index[order[i]] = i;
  for (size_t i = 0; i < order.size(); ++i) {
    const Node& n = q.node(order[i]);
    out += "  n" + std::to_string(i) + " [label=" + quote(op_name(n.op));
    if (is_message(n.op) && !n.content.empty()) out += ", tooltip=" + quote(n.content);
    out += "];\n";
  }
  for (size_t i = 0; i < order.size(); ++i) {
    for (NodeId c : q.node(order[i]).children) {
      out += "  n" + std::to_string(i) + " -> n" + std::to_string(index.at(c)) + ";\n";
    }
  }
  out += "}\n";
  return out;
}

}  // namespace

SpanQuery parse_sexpr(std::string_view text) { return Parser(text).run(); }

std::string render_node(const SpanQuery& query, NodeId id) {
  std::string out;
  render_sexpr(query, id, out);
  return out;
}

std::string render(const SpanQuery& query, RenderFormat format) {
  if (format == RenderFormat::Dot) return render_dot(query);
  if (query.root() == kNoNode) return "";
  return render_node(query, query.root());
}

}  // namespace spanq
