#include "tomodet/diff/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tomodet/util/error.hpp"

namespace tomodet::diff {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

NodePtr make_node(Shape shape, std::vector<double> data, bool requires_grad)
{
    if (data.size() != element_count(shape))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + to_string(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

} // namespace

std::size_t element_count(const Shape& shape)
{
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<double>& Node::grad_buffer()
{
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> data)
{
    require_finite(data, "constant tensor");
    return Tensor(make_node(std::move(shape), std::move(data), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data)
{
    require_finite(data, "parameter tensor");
    return Tensor(make_node(std::move(shape), std::move(data), true));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    const auto n = element_count(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::from_op(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                       std::function<void(Node&)> backward_fn)
{
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
    auto node = make_node(std::move(shape), std::move(data), tracked);
    if (tracked) {
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node_);
        node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->data.size(); }
std::size_t Tensor::extent(std::size_t axis) const { return node_->shape.at(axis); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const
{
    if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->is_leaf(); }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad()
{
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::uint64_t Tensor::id() const { return node_->id; }

Tensor Tensor::detach() const { return Tensor(make_node(shape(), node_->data, false)); }

void backward(const Tensor& loss)
{
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                    (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* in = node->inputs[next++].get();
            if (in->requires_grad && visited.insert(in).second) stack.emplace_back(in, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    loss.node()->grad_buffer()[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (!(*it)->is_leaf()) (*it)->backward(**it);
}

void require_finite(std::span<const double> values, const char* what)
{
    for (double v : values)
        if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value in ") + what);
}

} // namespace tomodet::diff
