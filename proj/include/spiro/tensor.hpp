#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spiro {

/// Cache-line aligned allocator. Vectorized kernels peel loops by pointer alignment, so equal
/// alignment on every run keeps reductions bit-reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
        return true;
    }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW extent. Matrices are carried as [N, 1, rows, cols].
struct Shape {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    constexpr std::size_t numel() const { return n * c * h * w; }
    constexpr std::size_t plane() const { return h * w; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;
    std::string str() const;
};

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

enum class Mode { train, eval };

template <typename T>
struct Node {
    Shape shape;
    Buffer<T> data;
    Buffer<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(const Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

/// Handle to a tensor node. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);
    Tensor(Shape shape, Buffer<T> values);
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node().shape; }
    std::size_t numel() const { return node().data.size(); }

    std::span<T> data() { return node().data; }
    std::span<const T> data() const { return node().data; }
    std::span<T> grad();
    std::span<const T> grad() const;
    bool has_grad() const { return defined() && node_->grad.size() == node_->data.size(); }

    bool requires_grad() const { return defined() && node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true);
    void zero_grad();

    T item() const;
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    /// Same values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    Node<T>& node() const;
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }
    const char* op_name() const { return node().op; }

   private:
    std::shared_ptr<Node<T>> node_;
};

/// Topologically ordered view of the graph reachable from a root.
template <typename T>
class Tape {
   public:
    static Tape record(const Tensor<T>& root);

    /// Inputs precede consumers; each node appears once.
    const std::vector<Node<T>*>& order() const { return order_; }
    std::size_t size() const { return order_.size(); }

    /// Seeds the root with d(root)/d(root) = 1 and runs every backward rule once, in reverse order.
    void run_backward() const;

   private:
    std::vector<Node<T>*> order_;
};

/// Populates grads of every requires_grad tensor reachable from loss.
template <typename T>
void backward(const Tensor<T>& loss);

bool grad_enabled();

/// Keeps freed activation buffers in the heap instead of returning them to the OS
/// (glibc only; a no-op elsewhere). Saves the page faults of re-mapping every step.
void retain_freed_memory();

/// Disables graph recording on this thread while alive.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

namespace detail {

template <typename T>
void check_finite(std::span<const T> values, const char* op);

template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> values,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(const Node<T>&)> backward_fn, const char* op);

template <typename T>
inline bool needs_grad(const std::shared_ptr<Node<T>>& p) {
    return p && p->requires_grad;
}

template <typename T>
inline Buffer<T>& grad_of(const std::shared_ptr<Node<T>>& p) {
    p->ensure_grad();
    return p->grad;
}

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace spiro
