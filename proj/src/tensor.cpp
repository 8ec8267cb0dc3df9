#include "spiro/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <sstream>
#include <unordered_set>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace spiro {

void retain_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node<T>>()) {
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != shape.numel()) {
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                         shape.str());
    }
    node_->shape = shape;
    node_->data = std::move(values);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    if (values.size() != shape.numel()) {
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                         shape.str());
    }
    node_->shape = shape;
    node_->data.assign(values.begin(), values.end());
}

template <typename T>
Node<T>& Tensor<T>::node() const {
    if (!node_) throw std::logic_error("tensor: access to undefined tensor");
    return *node_;
}

template <typename T>
std::span<T> Tensor<T>::grad() {
    if (!has_grad()) throw std::logic_error("tensor: no gradient buffer");
    return node_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!has_grad()) throw std::logic_error("tensor: no gradient buffer");
    return node_->grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    node().requires_grad = on;
    if (on) {
        node_->ensure_grad();
    } else {
        node_->grad.clear();
    }
    return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape().str() + " is not scalar");
    return node_->data[0];
}

template <typename T>
T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    const Shape& s = shape();
    return node_->data[((n * s.c + c) * s.h + h) * s.w + w];
}

template <typename T>
T Tensor<T>::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = shape();
    return node_->data[((n * s.c + c) * s.h + h) * s.w + w];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto copy = std::make_shared<Node<T>>();
    copy->shape = shape();
    copy->data = node().data;
    return Tensor<T>(std::move(copy));
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
    Tape tape;
    if (!root.defined()) return tape;
    std::unordered_set<const Node<T>*> visited;
    // Iterative post-order DFS: a node is emitted after all of its parents.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    visited.insert(&root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            tape.order_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

template <typename T>
void Tape<T>::run_backward() const {
    if (order_.empty()) return;
    Node<T>* root = order_.back();
    root->ensure_grad();
    std::fill(root->grad.begin(), root->grad.end(), T(1));
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + loss.shape().str());
    }
    if (!loss.requires_grad()) return;
    Tape<T>::record(loss).run_backward();
}

namespace detail {

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
    // exponent-all-ones test on the raw bits; an integer OR-reduction vectorises
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    constexpr Bits exp_mask = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
    Bits bad = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const Bits b = std::bit_cast<Bits>(values[i]) & exp_mask;
        bad |= Bits(b == exp_mask);
    }
    if (!bad) return;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError(std::string(op) + ": non-finite value at flat index " +
                               std::to_string(i));
        }
    }
}

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> values,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(const Node<T>&)> backward_fn, const char* op) {
    check_finite<T>(values, op);
    auto node = std::make_shared<Node<T>>();
    node->shape = shape;
    node->data = std::move(values);
    node->op = op;
    const bool track =
        grad_enabled() && std::any_of(parents.begin(), parents.end(),
                                      [](const auto& p) { return p && p->requires_grad; });
    if (track) {
        node->requires_grad = true;
        std::erase_if(parents, [](const auto& p) { return !p || !p->requires_grad; });
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);
template Tensor<float> make_result(Shape, Buffer<float>, std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(const Node<float>&)>, const char*);
template Tensor<double> make_result(Shape, Buffer<double>,
                                    std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(const Node<double>&)>, const char*);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace spiro
