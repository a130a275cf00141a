#pragma once

// Hierarchical network model shared by the simulator and the monitoring
// subsystem: a rooted tree whose leaves are compute nodes and whose internal
// vertices are switches. Every non-root vertex has exactly one parent, so an
// edge is identified by its child vertex and every leaf pair has a unique
// path.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace oct {

class UnknownNodeError : public std::runtime_error {
 public:
  explicit UnknownNodeError(const std::string& name)
      : std::runtime_error("unknown node: " + name) {}
};

class TopologyTree {
 public:
  struct Vertex {
    std::string name;
    int parent = -1;
    bool leaf = false;
    int depth = 0;
  };

  int add_switch(const std::string& name, int parent = -1) {
    return add(name, parent, false);
  }

  int add_node(const std::string& name, int parent) {
    if (parent < 0) throw std::invalid_argument("leaf needs a parent switch");
    return add(name, parent, true);
  }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  int require(const std::string& name) const {
    int id = find(name);
    if (id < 0) throw UnknownNodeError(name);
    return id;
  }

  int require_leaf(const std::string& name) const {
    int id = require(name);
    if (!vertices_[static_cast<std::size_t>(id)].leaf)
      throw UnknownNodeError(name + " (not a compute node)");
    return id;
  }

  const Vertex& vertex(int id) const {
    return vertices_.at(static_cast<std::size_t>(id));
  }

  const std::string& name(int id) const { return vertex(id).name; }
  bool is_leaf(int id) const { return vertex(id).leaf; }
  int parent(int id) const { return vertex(id).parent; }
  std::size_t size() const { return vertices_.size(); }
  int root() const { return root_; }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(vertices_.size()); ++i)
      if (vertices_[static_cast<std::size_t>(i)].leaf) out.push_back(i);
    return out;
  }

  // All edges, identified by the child-side vertex.
  std::vector<int> edges() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(vertices_.size()); ++i)
      if (vertices_[static_cast<std::size_t>(i)].parent >= 0) out.push_back(i);
    return out;
  }

  // Edges on the unique src -> dst path, in traversal order. Each edge is
  // named by its child vertex; an empty result means src == dst.
  std::vector<int> path_edges(int src, int dst) const {
    check_id(src);
    check_id(dst);
    std::vector<int> up, down;
    int a = src, b = dst;
    while (vertex(a).depth > vertex(b).depth) {
      up.push_back(a);
      a = vertex(a).parent;
    }
    while (vertex(b).depth > vertex(a).depth) {
      down.push_back(b);
      b = vertex(b).parent;
    }
    while (a != b) {
      up.push_back(a);
      down.push_back(b);
      a = vertex(a).parent;
      b = vertex(b).parent;
    }
    up.insert(up.end(), down.rbegin(), down.rend());
    return up;
  }

  int hops(int src, int dst) const {
    return static_cast<int>(path_edges(src, dst).size());
  }

 private:
  int add(const std::string& name, int parent, bool leaf) {
    if (index_.contains(name))
      throw std::invalid_argument("duplicate vertex name: " + name);
    if (parent >= static_cast<int>(vertices_.size()))
      throw std::invalid_argument("parent does not exist yet: " + name);
    if (parent < 0) {
      if (root_ >= 0) throw std::invalid_argument("tree already has a root");
      root_ = static_cast<int>(vertices_.size());
    } else if (vertex(parent).leaf) {
      throw std::invalid_argument("parent is a leaf: " + name);
    }
    Vertex v;
    v.name = name;
    v.parent = parent;
    v.leaf = leaf;
    v.depth = parent < 0 ? 0 : vertex(parent).depth + 1;
    vertices_.push_back(v);
    int id = static_cast<int>(vertices_.size()) - 1;
    index_[name] = id;
    return id;
  }

  void check_id(int id) const {
    if (id < 0 || id >= static_cast<int>(vertices_.size()))
      throw UnknownNodeError("#" + std::to_string(id));
  }

  std::vector<Vertex> vertices_;
  std::map<std::string, int> index_;
  int root_ = -1;
};

}  // namespace oct
