// Dense 2-D tensors with reverse-mode gradients, masked softmax, Adam and
// a binary checkpoint format.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "synflow/util.hpp"

namespace synflow::nn {

/// A named parameter. Values are stored in 32-bit floats; gradients and
/// optimizer moments in 64-bit.
struct Param {
  std::string name;
  std::string group;
  int rows = 0;
  int cols = 0;
  bool trainable = true;
  std::vector<float> value;
  std::vector<double> grad;
  std::vector<double> m;
  std::vector<double> v;
  long steps = 0;

  std::size_t size() const { return value.size(); }
};

class ParamStore {
 public:
  /// Adds a zero-initialised parameter. Names must be unique.
  Param& add(const std::string& name, int rows, int cols, const std::string& group, bool trainable = true);
  /// Adds a parameter with entries drawn from N(0, scale^2).
  Param& add_normal(const std::string& name, int rows, int cols, const std::string& group, Rng& rng, double scale);

  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  void zero_grad();
  /// Stable hash of the values of parameters whose name starts with `prefix`.
  std::uint64_t hash(const std::string& prefix = {}) const;

  /// Finite-difference probe: while set, `name[index]` reads as value + offset
  /// in double precision.
  void set_probe(const std::string& name, std::size_t index, double offset);
  void clear_probe();
  double read(const Param& p, std::size_t i) const;

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  const Param* probe_param_ = nullptr;
  std::size_t probe_index_ = 0;
  double probe_offset_ = 0.0;
};

/// Handle to a node of a Tape.
struct Var {
  int id = -1;
};

/// Records operations on row-major matrices and propagates gradients back.
/// One instance per computation; not thread-safe.
class Tape {
 public:
  /// With `record` false no gradients are tracked (inference).
  explicit Tape(ParamStore* store = nullptr, bool record = true) : store_(store), record_(record) {}

  Var param(const std::string& name);
  Var constant(int rows, int cols, std::vector<double> values);
  Var scalar(double v) { return constant(1, 1, {v}); }

  Var matmul(Var a, Var b);
  /// a * b^T.
  Var matmul_bt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Adds the 1 x cols row vector `bias` to every row of `a`.
  Var add_row(Var a, Var bias);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var relu(Var a);
  Var square(Var a);
  Var log(Var a);
  Var concat_cols(Var a, Var b);
  Var gather_rows(Var a, const std::vector<int>& rows);
  Var sum(Var a);
  Var mean(Var a);
  /// Column vector of a[r_i, c_i].
  Var pick(Var a, const std::vector<std::pair<int, int>>& entries);
  /// out[s] = sum of rows of the column vector `a` with segment[i] == s.
  Var segment_sum(Var a, const std::vector<int>& segment, int segments);
  /// Rows scaled to unit Euclidean norm (zero rows stay zero).
  Var row_l2_normalize(Var a);
  /// Row-wise log-softmax over entries with mask 1; masked entries are -inf
  /// and receive no gradient. Logits are clipped to [-50, 50]. Throws
  /// ContractViolation on a fully masked row.
  Var masked_log_softmax(Var a, const std::vector<std::uint8_t>& mask);

  int rows(Var v) const { return node(v).rows; }
  int cols(Var v) const { return node(v).cols; }
  const std::vector<double>& value(Var v) const { return node(v).value; }
  double item(Var v) const;
  const std::vector<double>& grad(Var v) const { return node(v).grad; }

  /// Back-propagates from the 1 x 1 node `loss`, accumulating into the
  /// gradients of the ParamStore.
  void backward(Var loss);

  /// Hash of the branches taken by piecewise ops (ReLU sides, logit clipping).
  /// Two tapes with equal signatures evaluated the same smooth piece.
  std::uint64_t branch_signature() const { return branches_; }

  static constexpr double kLogitClip = 50.0;

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> back;
  };

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  Var push(Node n);
  std::vector<double>& grad_of(Var v);
  [[noreturn]] void shape_error(const char* op, Var a, Var b) const;
  void note_branch(int side) { branches_ = (branches_ ^ static_cast<std::uint64_t>(side + 2)) * 0x100000001b3ULL; }

  ParamStore* store_;
  bool record_;
  std::vector<Node> nodes_;
  std::uint64_t branches_ = 0xcbf29ce484222325ULL;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Learning rate per parameter group.
  std::map<std::string, double> lr;
};

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

/// One Adam step with bias correction over every trainable parameter whose
/// group has a learning rate. Aborts without modifying anything when a
/// gradient is NaN or infinite, naming the parameter.
void adam_step(ParamStore& store, const AdamConfig& config);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  /// Coordinates left unchecked because every step down to 1e-8 crossed a kink.
  std::size_t kinks = 0;
};

/// Compares analytic gradients of `loss_fn` with central differences of step
/// h. `loss_fn` builds its graph on the given tape and returns the 1 x 1 loss.
/// When the +h and -h evaluations take different branches of a piecewise op
/// than the base point, h is divided by 10 until they agree.
/// At most `max_coords_per_param` coordinates per parameter are probed,
/// chosen by `rng` (all when <= 0).
GradCheckResult grad_check(ParamStore& store, const std::function<Var(Tape&)>& loss_fn, double h, Rng& rng,
                           int max_coords_per_param = 0);

/// Checkpoint: magic "SYNFLOWC", u32 version, u32-length-prefixed metadata
/// string, u32 tensor count, then per tensor name, rows, cols and
/// little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const std::string& metadata);
/// Loads values into parameters of matching name and shape; returns the
/// metadata string. Throws on unknown names or shape mismatches.
std::string load_checkpoint(const std::filesystem::path& path, ParamStore& store);
std::string read_checkpoint_metadata(const std::filesystem::path& path);

}  // namespace synflow::nn
