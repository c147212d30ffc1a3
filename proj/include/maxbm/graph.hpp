#pragma once

// Network and label containers.
//
// A Network is an immutable list of directed interactions (s_i, r_i) over
// N nodes. Undirected inputs are symmetrized: each edge line yields the two
// interactions v->w and w->v. Node ids are arbitrary strings mapped to dense
// indices in first-appearance order; all numerics run on indices.

#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "maxbm/error.hpp"

namespace maxbm {

using NodeIndex = std::size_t;
using ClassIndex = std::size_t;

struct Interaction {
  NodeIndex sender;
  NodeIndex receiver;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    f(line_no, text.substr(pos, nl - pos));
    pos = nl + 1;
  }
}

}  // namespace detail

class Network {
 public:
  Network() = default;

  /// Builds a network from explicit interactions; validates indices and
  /// self-loops. `node_ids` must be unique.
  Network(std::vector<std::string> node_ids, std::vector<Interaction> interactions,
          bool directed_source)
      : node_ids_(std::move(node_ids)),
        interactions_(std::move(interactions)),
        directed_source_(directed_source) {
    index_.reserve(node_ids_.size());
    for (std::size_t v = 0; v < node_ids_.size(); ++v) {
      if (!index_.emplace(node_ids_[v], v).second) {
        throw Error("duplicate node id '" + node_ids_[v] + "'");
      }
    }
    if (interactions_.empty()) throw Error("network has no interactions");
    degree_.assign(node_ids_.size(), 0);
    out_.resize(node_ids_.size());
    in_.resize(node_ids_.size());
    for (std::size_t i = 0; i < interactions_.size(); ++i) {
      const auto [s, r] = interactions_[i];
      if (s >= node_ids_.size() || r >= node_ids_.size()) {
        throw Error("interaction " + std::to_string(i) + " references an unknown node");
      }
      if (s == r) throw Error("self-loop on node '" + node_ids_[s] + "'");
      ++degree_[s];
      ++degree_[r];
      out_[s].push_back(i);
      in_[r].push_back(i);
    }
  }

  std::size_t num_nodes() const { return node_ids_.size(); }
  std::size_t num_interactions() const { return interactions_.size(); }

  const std::vector<std::string>& node_ids() const { return node_ids_; }
  const std::string& node_id(NodeIndex v) const { return node_ids_.at(v); }
  const std::vector<Interaction>& interactions() const { return interactions_; }
  const Interaction& interaction(std::size_t i) const { return interactions_[i]; }

  /// n_v: number of interaction endpoints at v (sender or receiver).
  std::size_t degree(NodeIndex v) const { return degree_[v]; }
  const std::vector<std::size_t>& degrees() const { return degree_; }

  /// Interaction indices where v is the sender / receiver.
  const std::vector<std::size_t>& outgoing(NodeIndex v) const { return out_[v]; }
  const std::vector<std::size_t>& incoming(NodeIndex v) const { return in_[v]; }

  bool directed_source() const { return directed_source_; }

  std::optional<NodeIndex> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<std::string> node_ids_;
  std::vector<Interaction> interactions_;
  std::vector<std::size_t> degree_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
  std::unordered_map<std::string, NodeIndex> index_;
  bool directed_source_ = true;
};

/// Parses an edge list: one `sender receiver` pair per line, `#` comments.
/// With `directed == false` every line contributes both orientations.
inline Network load_network(std::string_view text, bool directed) {
  std::vector<std::string> ids;
  std::unordered_map<std::string, NodeIndex> index;
  std::vector<Interaction> interactions;

  auto intern = [&](std::string_view tok) {
    auto [it, inserted] = index.emplace(std::string(tok), ids.size());
    if (inserted) ids.emplace_back(tok);
    return it->second;
  };

  detail::for_each_line(text, [&](std::size_t line_no, std::string_view raw) {
    auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') return;
    auto toks = detail::split_ws(line);
    if (toks.size() != 2) {
      throw ParseError("edge list line " + std::to_string(line_no) + ": expected 2 tokens, got " +
                       std::to_string(toks.size()));
    }
    if (toks[0] == toks[1]) {
      throw ParseError("edge list line " + std::to_string(line_no) + ": self-loop on node '" +
                       std::string(toks[0]) + "' is not supported");
    }
    const auto s = intern(toks[0]);
    const auto r = intern(toks[1]);
    interactions.push_back({s, r});
    if (!directed) interactions.push_back({r, s});
  });

  if (interactions.empty()) throw ParseError("edge list contains no interactions");
  return Network(std::move(ids), std::move(interactions), directed);
}

/// Writes every interaction as a directed `sender receiver` line. Reloading
/// the output with `directed = true` reproduces the interaction list.
inline std::string to_edge_list(const Network& net) {
  std::ostringstream os;
  for (const auto& e : net.interactions()) {
    os << net.node_id(e.sender) << ' ' << net.node_id(e.receiver) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

class LabelStore {
 public:
  LabelStore() = default;

  explicit LabelStore(std::vector<std::string> class_names) : class_names_(std::move(class_names)) {
    validate_classes();
  }

  LabelStore(std::vector<std::string> class_names, std::map<NodeIndex, ClassIndex> truth)
      : class_names_(std::move(class_names)), truth_(std::move(truth)) {
    validate_classes();
    for (const auto& [v, c] : *truth_) check_class(c);
  }

  std::size_t num_classes() const { return class_names_.size(); }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::optional<ClassIndex> find_class(std::string_view name) const {
    for (std::size_t c = 0; c < class_names_.size(); ++c) {
      if (class_names_[c] == name) return c;
    }
    return std::nullopt;
  }

  bool has_truth() const { return truth_.has_value(); }
  const std::map<NodeIndex, ClassIndex>& truth() const {
    if (!truth_) throw Error("label store has no ground truth");
    return *truth_;
  }
  std::optional<ClassIndex> true_label(NodeIndex v) const {
    if (!truth_) return std::nullopt;
    auto it = truth_->find(v);
    if (it == truth_->end()) return std::nullopt;
    return it->second;
  }

  const std::map<NodeIndex, ClassIndex>& acquired() const { return acquired_; }
  bool is_acquired(NodeIndex v) const { return acquired_.count(v) != 0; }

  /// Reveals a label. When truth is present the label must agree with it.
  void acquire(NodeIndex v, ClassIndex c) {
    check_class(c);
    if (acquired_.count(v)) throw Error("node " + std::to_string(v) + " is already labelled");
    if (truth_) {
      auto it = truth_->find(v);
      if (it == truth_->end() || it->second != c) {
        throw Error("acquired label for node " + std::to_string(v) + " disagrees with ground truth");
      }
    }
    acquired_.emplace(v, c);
  }

  /// Moves the true label of v into the acquired set.
  void acquire_true(NodeIndex v) {
    auto c = true_label(v);
    if (!c) throw Error("no ground-truth label for node " + std::to_string(v));
    acquire(v, *c);
  }

  void clear_acquired() { acquired_.clear(); }

 private:
  void validate_classes() const {
    if (class_names_.size() < 2) throw Error("at least 2 classes are required");
    for (std::size_t a = 0; a < class_names_.size(); ++a)
      for (std::size_t b = a + 1; b < class_names_.size(); ++b)
        if (class_names_[a] == class_names_[b]) throw Error("duplicate class name '" + class_names_[a] + "'");
  }
  void check_class(ClassIndex c) const {
    if (c >= class_names_.size()) throw Error("class index out of range");
  }

  std::vector<std::string> class_names_;
  std::optional<std::map<NodeIndex, ClassIndex>> truth_;
  std::map<NodeIndex, ClassIndex> acquired_;
};

/// Parses `node_id,label` lines into a ground-truth store. A leading
/// `node,label` header is skipped. Classes are numbered in order of first
/// appearance.
inline LabelStore load_labels(std::string_view text, const Network& net) {
  std::vector<std::string> classes;
  std::map<NodeIndex, ClassIndex> truth;
  bool first = true;

  detail::for_each_line(text, [&](std::size_t line_no, std::string_view raw) {
    auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#') return;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos) {
      throw ParseError("label line " + std::to_string(line_no) + ": expected 'node,label'");
    }
    const auto node = detail::trim(line.substr(0, comma));
    const auto label = detail::trim(line.substr(comma + 1));
    const bool was_first = std::exchange(first, false);
    if (was_first && node == "node" && label == "label" && !net.find(node)) return;
    if (node.empty() || label.empty()) {
      throw ParseError("label line " + std::to_string(line_no) + ": empty field");
    }
    const auto v = net.find(node);
    if (!v) {
      throw ParseError("label line " + std::to_string(line_no) + ": unknown node '" + std::string(node) + "'");
    }
    ClassIndex c = classes.size();
    for (std::size_t k = 0; k < classes.size(); ++k)
      if (classes[k] == label) c = k;
    if (c == classes.size()) classes.emplace_back(label);
    auto [it, inserted] = truth.emplace(*v, c);
    if (!inserted && it->second != c) {
      throw ParseError("label line " + std::to_string(line_no) + ": conflicting labels for node '" +
                       std::string(node) + "'");
    }
  });

  if (classes.size() < 2) {
    throw ParseError("label file must contain at least 2 distinct labels, found " + std::to_string(classes.size()));
  }
  return LabelStore(std::move(classes), std::move(truth));
}

}  // namespace maxbm
