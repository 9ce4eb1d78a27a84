#include <algorithm>
#include <cstring>
#include <cmath>

#include "synflow/numerics.hpp"

namespace synflow::nn {

Param& ParamStore::add(const std::string& name, int rows, int cols, const std::string& group, bool trainable) {
  if (index_.count(name)) throw ContractViolation("duplicate parameter name " + name);
  if (rows <= 0 || cols <= 0) throw ContractViolation("parameter " + name + " must have a positive shape");
  Param p;
  p.name = name;
  p.group = group;
  p.rows = rows;
  p.cols = cols;
  p.trainable = trainable;
  const auto n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  p.value.assign(n, 0.0f);
  p.grad.assign(n, 0.0);
  p.m.assign(n, 0.0);
  p.v.assign(n, 0.0);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::add_normal(const std::string& name, int rows, int cols, const std::string& group, Rng& rng,
                              double scale) {
  Param& p = add(name, rows, cols, group);
  for (auto& x : p.value) x = static_cast<float>(rng.normal() * scale);
  return p;
}

Param& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter " + name);
  return params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter " + name);
  return params_[it->second];
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::uint64_t ParamStore::hash(const std::string& prefix) const {
  StableHash h;
  for (const auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    h.add(std::string_view(p.name));
    for (float x : p.value) {
      std::uint32_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      h.add(static_cast<std::uint64_t>(bits));
    }
  }
  return h.value();
}

void ParamStore::set_probe(const std::string& name, std::size_t index, double offset) {
  probe_param_ = &get(name);
  probe_index_ = index;
  probe_offset_ = offset;
}

void ParamStore::clear_probe() { probe_param_ = nullptr; }

double ParamStore::read(const Param& p, std::size_t i) const {
  const double v = p.value[i];
  return &p == probe_param_ && i == probe_index_ ? v + probe_offset_ : v;
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Tape::grad_of(Var v) {
  auto& n = node(v);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::shape_error(const char* op, Var a, Var b) const {
  throw ContractViolation(std::string(op) + ": incompatible shapes " + std::to_string(rows(a)) + "x" +
                          std::to_string(cols(a)) + " and " + std::to_string(rows(b)) + "x" + std::to_string(cols(b)));
}

double Tape::item(Var v) const {
  if (node(v).value.size() != 1) throw ContractViolation("item() on a non-scalar tensor");
  return node(v).value[0];
}

Var Tape::param(const std::string& name) {
  if (!store_) throw ContractViolation("tape has no parameter store");
  Param& p = store_->get(name);
  Node n;
  n.rows = p.rows;
  n.cols = p.cols;
  n.value.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) n.value[i] = store_->read(p, i);
  n.requires_grad = record_ && p.trainable;
  if (n.requires_grad) {
    Param* target = &p;
    n.back = [target](Tape&, Node& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) target->grad[i] += self.grad[i];
    };
  }
  return push(std::move(n));
}

Var Tape::constant(int rows, int cols, std::vector<double> values) {
  if (values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    throw ContractViolation("constant: value count does not match shape");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.value = std::move(values);
  return push(std::move(n));
}

// Inputs are usually sparse fingerprints, so zero entries of the left operand
// are skipped in both passes.
Var Tape::matmul(Var a, Var b) {
  if (cols(a) != rows(b)) shape_error("matmul", a, b);
  const int n = rows(a), k = cols(a), m = cols(b);
  Node out;
  out.rows = n;
  out.cols = m;
  out.value.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(m), 0.0);
  const auto& av = value(a);
  const auto& bv = value(b);
  for (int i = 0; i < n; ++i) {
    double* row = &out.value[static_cast<std::size_t>(i) * static_cast<std::size_t>(m)];
    for (int t = 0; t < k; ++t) {
      const double x = av[static_cast<std::size_t>(i) * static_cast<std::size_t>(k) + static_cast<std::size_t>(t)];
      if (x == 0.0) continue;
      const double* brow = &bv[static_cast<std::size_t>(t) * static_cast<std::size_t>(m)];
      for (int j = 0; j < m; ++j) row[j] += x * brow[j];
    }
  }
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  if (out.requires_grad) {
    out.back = [a, b, n, k, m](Tape& t, Node& self) {
      const auto& g = self.grad;
      if (t.node(a).requires_grad) {
        auto& ga = t.grad_of(a);
        const auto& bv = t.value(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) {
            const double gij = g[static_cast<std::size_t>(i) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];
            if (gij == 0.0) continue;
            for (int s = 0; s < k; ++s)
              ga[static_cast<std::size_t>(i) * static_cast<std::size_t>(k) + static_cast<std::size_t>(s)] +=
                  gij * bv[static_cast<std::size_t>(s) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];
          }
      }
      if (t.node(b).requires_grad) {
        auto& gb = t.grad_of(b);
        const auto& av = t.value(a);
        for (int i = 0; i < n; ++i) {
          const double* grow = &g[static_cast<std::size_t>(i) * static_cast<std::size_t>(m)];
          for (int s = 0; s < k; ++s) {
            const double x = av[static_cast<std::size_t>(i) * static_cast<std::size_t>(k) + static_cast<std::size_t>(s)];
            if (x == 0.0) continue;
            double* gbrow = &gb[static_cast<std::size_t>(s) * static_cast<std::size_t>(m)];
            for (int j = 0; j < m; ++j) gbrow[j] += x * grow[j];
          }
        }
      }
    };
  }
  return push(std::move(out));
}

Var Tape::matmul_bt(Var a, Var b) {
  if (cols(a) != cols(b)) shape_error("matmul_bt", a, b);
  const int n = rows(a), k = cols(a), m = rows(b);
  Node out;
  out.rows = n;
  out.cols = m;
  out.value.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(m), 0.0);
  const auto& av = value(a);
  const auto& bv = value(b);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      const double* ar = &av[static_cast<std::size_t>(i) * static_cast<std::size_t>(k)];
      const double* br = &bv[static_cast<std::size_t>(j) * static_cast<std::size_t>(k)];
      for (int t = 0; t < k; ++t) s += ar[t] * br[t];
      out.value[static_cast<std::size_t>(i) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] = s;
    }
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  if (out.requires_grad) {
    out.back = [a, b, n, k, m](Tape& t, Node& self) {
      const auto& g = self.grad;
      const bool need_a = t.node(a).requires_grad, need_b = t.node(b).requires_grad;
      std::vector<double>* ga = need_a ? &t.grad_of(a) : nullptr;
      std::vector<double>* gb = need_b ? &t.grad_of(b) : nullptr;
      const auto& av = t.value(a);
      const auto& bv = t.value(b);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const double gij = g[static_cast<std::size_t>(i) * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];
          if (gij == 0.0) continue;
          for (int s = 0; s < k; ++s) {
            const auto ai = static_cast<std::size_t>(i) * static_cast<std::size_t>(k) + static_cast<std::size_t>(s);
            const auto bi = static_cast<std::size_t>(j) * static_cast<std::size_t>(k) + static_cast<std::size_t>(s);
            if (ga) (*ga)[ai] += gij * bv[bi];
            if (gb) (*gb)[bi] += gij * av[ai];
          }
        }
    };
  }
  return push(std::move(out));
}

namespace {

template <typename F>
void for_each_index(std::size_t n, F f) {
  for (std::size_t i = 0; i < n; ++i) f(i);
}

}  // namespace

Var Tape::add(Var a, Var b) {
  if (rows(a) != rows(b) || cols(a) != cols(b)) shape_error("add", a, b);
  Node out{rows(a), cols(a), value(a), {}, node(a).requires_grad || node(b).requires_grad, {}};
  const auto& bv = value(b);
  for_each_index(out.value.size(), [&](std::size_t i) { out.value[i] += bv[i]; });
  if (out.requires_grad)
    out.back = [a, b](Tape& t, Node& self) {
      for (Var v : {a, b}) {
        if (!t.node(v).requires_grad) continue;
        auto& g = t.grad_of(v);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  return push(std::move(out));
}

Var Tape::sub(Var a, Var b) {
  if (rows(a) != rows(b) || cols(a) != cols(b)) shape_error("sub", a, b);
  Node out{rows(a), cols(a), value(a), {}, node(a).requires_grad || node(b).requires_grad, {}};
  const auto& bv = value(b);
  for_each_index(out.value.size(), [&](std::size_t i) { out.value[i] -= bv[i]; });
  if (out.requires_grad)
    out.back = [a, b](Tape& t, Node& self) {
      if (t.node(a).requires_grad) {
        auto& g = t.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (t.node(b).requires_grad) {
        auto& g = t.grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  return push(std::move(out));
}

Var Tape::add_row(Var a, Var bias) {
  if (rows(bias) != 1 || cols(bias) != cols(a)) shape_error("add_row", a, bias);
  const int n = rows(a), m = cols(a);
  Node out{n, m, value(a), {}, node(a).requires_grad || node(bias).requires_grad, {}};
  const auto& bv = value(bias);
  for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] += bv[i % static_cast<std::size_t>(m)];
  if (out.requires_grad)
    out.back = [a, bias, m](Tape& t, Node& self) {
      if (t.node(a).requires_grad) {
        auto& g = t.grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (t.node(bias).requires_grad) {
        auto& g = t.grad_of(bias);
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % static_cast<std::size_t>(m)] += self.grad[i];
      }
    };
  return push(std::move(out));
}

Var Tape::mul(Var a, Var b) {
  if (rows(a) != rows(b) || cols(a) != cols(b)) shape_error("mul", a, b);
  Node out{rows(a), cols(a), value(a), {}, node(a).requires_grad || node(b).requires_grad, {}};
  const auto& bv = value(b);
  for_each_index(out.value.size(), [&](std::size_t i) { out.value[i] *= bv[i]; });
  if (out.requires_grad)
    out.back = [a, b](Tape& t, Node& self) {
      if (t.node(a).requires_grad) {
        auto& g = t.grad_of(a);
        const auto& bv = t.value(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
      }
      if (t.node(b).requires_grad) {
        auto& g = t.grad_of(b);
        const auto& av = t.value(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
      }
    };
  return push(std::move(out));
}

Var Tape::scale(Var a, double c) {
  Node out{rows(a), cols(a), value(a), {}, node(a).requires_grad, {}};
  for (auto& x : out.value) x *= c;
  if (out.requires_grad)
    out.back = [a, c](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    };
  return push(std::move(out));
}

Var Tape::relu(Var a) {
  Node out{rows(a), cols(a), value(a), {}, node(a).requires_grad, {}};
  for (auto& x : out.value) {
    note_branch(x > 0.0);
    x = x > 0.0 ? x : 0.0;
  }
  if (out.requires_grad)
    out.back = [a](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      const auto& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] > 0.0) g[i] += self.grad[i];
    };
  return push(std::move(out));
}

Var Tape::square(Var a) {
  Node out{rows(a), cols(a), value(a), {}, node(a).requires_grad, {}};
  for (auto& x : out.value) x = x * x;
  if (out.requires_grad)
    out.back = [a](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      const auto& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * av[i] * self.grad[i];
    };
  return push(std::move(out));
}

Var Tape::log(Var a) {
  Node out{rows(a), cols(a), value(a), {}, node(a).requires_grad, {}};
  for (auto& x : out.value) x = std::log(x);
  if (out.requires_grad)
    out.back = [a](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      const auto& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / av[i];
    };
  return push(std::move(out));
}

Var Tape::concat_cols(Var a, Var b) {
  if (rows(a) != rows(b)) shape_error("concat_cols", a, b);
  const int n = rows(a), ca = cols(a), cb = cols(b);
  Node out;
  out.rows = n;
  out.cols = ca + cb;
  out.value.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(ca + cb));
  const auto& av = value(a);
  const auto& bv = value(b);
  for (int i = 0; i < n; ++i) {
    out.value.insert(out.value.end(), av.begin() + i * ca, av.begin() + (i + 1) * ca);
    out.value.insert(out.value.end(), bv.begin() + i * cb, bv.begin() + (i + 1) * cb);
  }
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  if (out.requires_grad)
    out.back = [a, b, n, ca, cb](Tape& t, Node& self) {
      const int w = ca + cb;
      if (t.node(a).requires_grad) {
        auto& g = t.grad_of(a);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < ca; ++j) g[static_cast<std::size_t>(i * ca + j)] += self.grad[static_cast<std::size_t>(i * w + j)];
      }
      if (t.node(b).requires_grad) {
        auto& g = t.grad_of(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < cb; ++j)
            g[static_cast<std::size_t>(i * cb + j)] += self.grad[static_cast<std::size_t>(i * w + ca + j)];
      }
    };
  return push(std::move(out));
}

Var Tape::gather_rows(Var a, const std::vector<int>& idx) {
  const int m = cols(a);
  Node out;
  out.rows = static_cast<int>(idx.size());
  out.cols = m;
  out.value.reserve(idx.size() * static_cast<std::size_t>(m));
  const auto& av = value(a);
  for (int r : idx) {
    if (r < 0 || r >= rows(a)) throw ContractViolation("gather_rows: row index out of range");
    out.value.insert(out.value.end(), av.begin() + r * m, av.begin() + (r + 1) * m);
  }
  out.requires_grad = node(a).requires_grad;
  if (out.requires_grad)
    out.back = [a, idx, m](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (int j = 0; j < m; ++j)
          g[static_cast<std::size_t>(idx[k] * m + j)] += self.grad[k * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)];
    };
  return push(std::move(out));
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double x : value(a)) s += x;
  Node out{1, 1, {s}, {}, node(a).requires_grad, {}};
  if (out.requires_grad)
    out.back = [a](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      for (auto& x : g) x += self.grad[0];
    };
  return push(std::move(out));
}

Var Tape::mean(Var a) {
  const auto n = static_cast<double>(value(a).size());
  if (n == 0) throw ContractViolation("mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var Tape::pick(Var a, const std::vector<std::pair<int, int>>& entries) {
  const int m = cols(a);
  Node out;
  out.rows = static_cast<int>(entries.size());
  out.cols = 1;
  out.value.reserve(entries.size());
  for (const auto& [r, c] : entries) {
    if (r < 0 || r >= rows(a) || c < 0 || c >= m) throw ContractViolation("pick: index out of range");
    out.value.push_back(value(a)[static_cast<std::size_t>(r * m + c)]);
  }
  out.requires_grad = node(a).requires_grad;
  if (out.requires_grad)
    out.back = [a, entries, m](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      for (std::size_t k = 0; k < entries.size(); ++k)
        g[static_cast<std::size_t>(entries[k].first * m + entries[k].second)] += self.grad[k];
    };
  return push(std::move(out));
}

Var Tape::segment_sum(Var a, const std::vector<int>& segment, int segments) {
  if (cols(a) != 1 || segment.size() != value(a).size()) throw ContractViolation("segment_sum: expects a column vector with one segment id per row");
  Node out;
  out.rows = segments;
  out.cols = 1;
  out.value.assign(static_cast<std::size_t>(segments), 0.0);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < 0 || segment[i] >= segments) throw ContractViolation("segment_sum: segment id out of range");
    out.value[static_cast<std::size_t>(segment[i])] += value(a)[i];
  }
  out.requires_grad = node(a).requires_grad;
  if (out.requires_grad)
    out.back = [a, segment](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      for (std::size_t i = 0; i < segment.size(); ++i) g[i] += self.grad[static_cast<std::size_t>(segment[i])];
    };
  return push(std::move(out));
}

Var Tape::row_l2_normalize(Var a) {
  const int n = rows(a), m = cols(a);
  Node out{n, m, value(a), {}, node(a).requires_grad, {}};
  std::vector<double> norms(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += out.value[static_cast<std::size_t>(i * m + j)] * out.value[static_cast<std::size_t>(i * m + j)];
    norms[static_cast<std::size_t>(i)] = std::sqrt(s);
    if (s > 0.0)
      for (int j = 0; j < m; ++j) out.value[static_cast<std::size_t>(i * m + j)] /= norms[static_cast<std::size_t>(i)];
  }
  if (out.requires_grad)
    out.back = [a, n, m, norms](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      for (int i = 0; i < n; ++i) {
        const double r = norms[static_cast<std::size_t>(i)];
        if (r == 0.0) continue;
        double dot = 0.0;
        for (int j = 0; j < m; ++j) dot += self.grad[static_cast<std::size_t>(i * m + j)] * self.value[static_cast<std::size_t>(i * m + j)];
        for (int j = 0; j < m; ++j) {
          const auto k = static_cast<std::size_t>(i * m + j);
          g[k] += (self.grad[k] - dot * self.value[k]) / r;
        }
      }
    };
  return push(std::move(out));
}

Var Tape::masked_log_softmax(Var a, const std::vector<std::uint8_t>& mask) {
  const int n = rows(a), m = cols(a);
  if (mask.size() != value(a).size()) throw ContractViolation("masked_log_softmax: mask size does not match logits");
  Node out{n, m, std::vector<double>(value(a).size(), kNegInf), {}, node(a).requires_grad, {}};
  const auto& av = value(a);
  for (int i = 0; i < n; ++i) {
    double mx = kNegInf;
    for (int j = 0; j < m; ++j) {
      const auto k = static_cast<std::size_t>(i * m + j);
      if (mask[k]) mx = std::max(mx, std::clamp(av[k], -kLogitClip, kLogitClip));
    }
    if (mx == kNegInf) throw ContractViolation("masked_log_softmax: every entry of a row is masked");
    double s = 0.0;
    for (int j = 0; j < m; ++j) {
      const auto k = static_cast<std::size_t>(i * m + j);
      if (mask[k]) s += std::exp(std::clamp(av[k], -kLogitClip, kLogitClip) - mx);
    }
    const double lse = mx + std::log(s);
    for (int j = 0; j < m; ++j) {
      const auto k = static_cast<std::size_t>(i * m + j);
      if (!mask[k]) continue;
      note_branch(av[k] < -kLogitClip ? -1 : av[k] > kLogitClip ? 1 : 0);
      out.value[k] = std::clamp(av[k], -kLogitClip, kLogitClip) - lse;
    }
  }
  if (out.requires_grad)
    out.back = [a, n, m, mask](Tape& t, Node& self) {
      auto& g = t.grad_of(a);
      const auto& av = t.value(a);
      for (int i = 0; i < n; ++i) {
        double gs = 0.0;
        for (int j = 0; j < m; ++j) {
          const auto k = static_cast<std::size_t>(i * m + j);
          if (mask[k]) gs += self.grad[k];
        }
        for (int j = 0; j < m; ++j) {
          const auto k = static_cast<std::size_t>(i * m + j);
          if (!mask[k] || av[k] < -kLogitClip || av[k] > kLogitClip) continue;
          g[k] += self.grad[k] - std::exp(self.value[k]) * gs;
        }
      }
    };
  return push(std::move(out));
}

void Tape::backward(Var loss) {
  if (node(loss).value.size() != 1) throw ContractViolation("backward() needs a scalar loss");
  for (auto& n : nodes_) n.grad.clear();
  grad_of(loss)[0] = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, n);
  }
}

}  // namespace synflow::nn
