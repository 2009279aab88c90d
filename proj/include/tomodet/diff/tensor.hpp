#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tomodet::diff {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation graph. `backward` reads this node's grad and
// adds its contribution into the grads of `inputs`.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward;
    std::uint64_t id = 0;

    bool is_leaf() const { return !backward; }
    std::vector<double>& grad_buffer();
};

/// Reverse-mode differentiable n-d array of doubles (row-major).
///
/// A Tensor is a cheap handle; copies share the same node. Operations build a
/// graph only when at least one input requires a gradient, so inference with
/// constant parameters allocates no tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> data);
    static Tensor parameter(Shape shape, std::vector<double> data);
    static Tensor zeros(Shape shape, bool requires_grad = false);

    /// Output of an operation. `backward` is dropped if no input tracks a gradient.
    static Tensor from_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t extent(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }

    std::span<const double> data() const;
    /// Mutable access for leaves (parameters, inputs). Mutating an interior
    /// node after graph construction is a logic error.
    std::span<double> mutable_data();
    double item() const;

    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    std::uint64_t id() const;
    Tensor detach() const;

    const NodePtr& node() const { return node_; }

private:
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}
    NodePtr node_;
};

/// Propagates d(loss)/d(tensor) into every tracked tensor reachable from the
/// scalar `loss`. Leaf grads accumulate across calls until zero_grad();
/// interior grads are recomputed each call.
void backward(const Tensor& loss);

/// Throws NumericalError naming `what` if any element is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

} // namespace tomodet::diff
