#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlec {

class Rng;

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major double tensor with optional reverse-mode gradient.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Use clone() for an independent leaf copy. Every op in this header returns
/// a new node and never modifies its inputs; when any input requires a
/// gradient the result records its inputs and a backward rule, which together
/// form the computation tape walked by backward().
class Tensor {
 public:
  struct Node;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values, bool requires_grad = false);
  /// Rank-0 tensor; the only kind that broadcasts against other shapes.
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable values; intended for initializers and optimizers acting on leaves.
  std::span<double> mutable_data();
  /// Accumulated gradient; all zeros when nothing has been propagated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;
  std::vector<double> to_vector() const;

  /// Independent leaf with copied values (and copied requires_grad flag).
  Tensor clone() const;
  /// Independent constant with copied values and no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// ---- Linear algebra ---------------------------------------------------------

/// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched [b x m x k] . [b x k x n] -> [b x m x n]
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& x);

// ---- Elementwise -------------------------------------------------------------
// Binary ops require identical shapes, or one rank-0 operand.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
/// Throws std::domain_error on non-positive input.
Tensor log(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// x[..., n] + bias[n], broadcasting the bias over every leading index.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

// ---- Reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x, std::size_t axis);
Tensor mean(const Tensor& x, std::size_t axis);
/// Gradient flows to the first maximal element of each slice.
Tensor max(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Mean of x[B x T x H] over the steps where mask[B x T] is 1 -> [B x H].
Tensor masked_mean(const Tensor& x, const Tensor& mask);

// ---- Normalization and probability ----------------------------------------------

/// Max-subtracted softmax along axis. Entries where mask == 0 get exactly 0;
/// a slice with no unmasked entry is an error. Pass an undefined mask for none.
Tensor softmax(const Tensor& x, std::size_t axis, const Tensor& mask = {});

/// Inverted dropout: in training mode zero with probability p and scale the
/// survivors by 1/(1-p). Identity in eval mode or when p == 0.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

/// Normalizes over the last axis, then applies gamma and beta of that width.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- Shape manipulation --------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Stacks equally shaped tensors along a new axis.
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);
/// Removes `axis` by taking position `index` along it.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
/// Keeps positions [start, start + length) of `axis`.
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// ---- Sequence helpers ------------------------------------------------------------

/// Rows of table[V x d] gathered by id -> [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Row-wise choice between two [B x H] states: row b comes from `updated`
/// where keep[b] == 1 and from `previous` otherwise. A selection, not a blend,
/// so frozen rows stay bit-identical.
Tensor masked_update(const Tensor& previous, const Tensor& updated, const Tensor& keep);

/// Scaled dot-product attention over [B x T x d] projections split into
/// `heads` heads of width d/heads. Keys where mask[B x T] == 0 are excluded.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& mask, std::size_t heads);

// ---- Gradients -----------------------------------------------------------------

/// Reverse sweep from a scalar loss, accumulating into every tensor on the
/// tape that requires a gradient. Throws ShapeError for a non-scalar loss.
void backward(const Tensor& loss);

/// Central-difference check of a scalar function of one tensor. Returns
/// max |a - n| / max(1e-8, |a| + |n|) over coordinates.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double eps = 1e-5);

/// Same check over several parameter leaves that `f` closes over. Leaves are
/// perturbed in place and restored.
double gradient_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                      double eps = 1e-5);

// ---- Serialization --------------------------------------------------------------

/// Little-endian binary: "MLTN", u32 version, u32 rank, u64 dims, f64 values.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

inline constexpr std::uint32_t kTensorFormatVersion = 1;

}  // namespace mlec
