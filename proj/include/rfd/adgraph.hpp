#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "rfd/errors.hpp"

// Reverse-mode automatic differentiation on an arena tape.
//
// Values are doubles paired with a node index on a Tape. Arithmetic between
// constants folds immediately and records nothing, so the same code path
// evaluates "plain" when no parameters are registered. Complex values are a
// pair of real nodes; gradients of real losses with respect to a complex
// value are reported component-wise (d/dRe, d/dIm).
//
// Concurrency model: one Tape per worker. Workers never share a tape;
// per-batch gradient maps are reduced by the coordinator in a fixed order.

namespace rfd {

class Tape;

struct DiffScalar {
    double v = 0.0;
    int32_t node = -1; // -1: constant, not on any tape
    Tape* tape = nullptr;

    DiffScalar() = default;
    DiffScalar(double c) : v(c) {} // NOLINT: implicit constants are the point
    DiffScalar(double value, int32_t node_id, Tape* t) : v(value), node(node_id), tape(t) {}

    bool is_const() const { return node < 0; }
    double value() const { return v; }
};

// Custom tape node with a hand-written backward rule. The node's forward
// value is computed by the creator; backward() must route the incoming
// adjoint to the node's inputs via Tape::add_adjoint.
class CustomOp {
public:
    virtual ~CustomOp() = default;
    virtual void backward(Tape& tape, int32_t node, double adjoint) = 0;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // ---- construction ----

    int32_t push_leaf(double value) {
        nodes_.push_back(Node{-1, -1, 0.0, 0.0});
        values_.push_back(value);
        return static_cast<int32_t>(nodes_.size()) - 1;
    }

    int32_t push(double value, int32_t a, double pa, int32_t b, double pb) {
        nodes_.push_back(Node{a, b, pa, pb});
        values_.push_back(value);
        return static_cast<int32_t>(nodes_.size()) - 1;
    }

    // Node whose backward is implemented by `op`. Parents are whatever the op
    // routes adjoints to; they must precede the node on the tape.
    int32_t push_custom(double value, std::shared_ptr<CustomOp> op) {
        const int32_t id = push_leaf(value);
        customs_.emplace_back(id, std::move(op));
        return id;
    }

    DiffScalar make(double value, int32_t a, double pa, int32_t b, double pb) {
        return DiffScalar{value, push(value, a, pa, b, pb), this};
    }

    // ---- parameters ----

    DiffScalar register_parameter(double initial) {
        const int32_t id = push_leaf(initial);
        params_.push_back(id);
        return DiffScalar{initial, id, this};
    }

    size_t parameter_count() const { return params_.size(); }

    double parameter_value(size_t i) const { return values_[params_.at(i)]; }

    DiffScalar parameter(size_t i) {
        const int32_t id = params_.at(i);
        return DiffScalar{values_[id], id, this};
    }

    // ---- backward ----

    void backward(const DiffScalar& loss) {
        if (loss.is_const()) {
            adjoints_.assign(values_.size(), 0.0);
            return;
        }
        if (loss.tape != this)
            throw ContractViolation("backward: loss lives on a different tape");
        const std::pair<int32_t, double> seed{loss.node, 1.0};
        backward_seeded({&seed, 1});
    }

    // Seed several nodes with given adjoints and sweep once. Used when the
    // downstream stage's gradients arrive from another tape.
    void backward_seeded(std::span<const std::pair<int32_t, double>> seeds) {
        adjoints_.assign(values_.size(), 0.0);
        for (const auto& [id, adj] : seeds) {
            if (id < 0 || id >= static_cast<int32_t>(values_.size()))
                throw ContractViolation("backward_seeded: node id out of range");
            adjoints_[id] += adj;
        }
        // customs_ is sorted by node id by construction; walk it from the end.
        auto cit = customs_.rbegin();
        for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
            const double adj = adjoints_[i];
            if (adj == 0.0) {
                while (cit != customs_.rend() && cit->first == i) ++cit;
                continue;
            }
            bool custom = false;
            while (cit != customs_.rend() && cit->first == i) {
                cit->second->backward(*this, i, adj);
                custom = true;
                ++cit;
            }
            if (custom) continue;
            const Node& n = nodes_[i];
            if (n.a >= 0) adjoints_[n.a] += n.pa * adj;
            if (n.b >= 0) adjoints_[n.b] += n.pb * adj;
        }
    }

    double adjoint(int32_t node) const {
        if (node < 0) return 0.0;
        return adjoints_.at(node);
    }

    void add_adjoint(int32_t node, double v) {
        if (node >= 0) adjoints_.at(node) += v;
    }

    // Gradient of the last backward() loss w.r.t. a value on this tape.
    // Constants have zero gradient by definition.
    double gradient(const DiffScalar& x) const {
        if (x.is_const()) return 0.0;
        if (x.tape != this) throw ContractViolation("gradient: value lives on a different tape");
        return adjoint(x.node);
    }

    // Gradients of all registered parameters, in registration order.
    std::vector<double> parameter_gradients() const {
        std::vector<double> g(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) g[i] = adjoint(params_[i]);
        return g;
    }

    // ---- bookkeeping ----

    double value(int32_t node) const { return values_.at(node); }
    size_t size() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        values_.clear();
        adjoints_.clear();
        params_.clear();
        customs_.clear();
    }

    // ---- active-tape stack (thread local) ----

    static Tape& active();
    static Tape* active_or_null();

private:
    friend struct TapeScope;

    struct Node {
        int32_t a, b;
        double pa, pb;
    };

    std::vector<Node> nodes_;
    std::vector<double> values_;
    std::vector<double> adjoints_;
    std::vector<int32_t> params_;
    std::vector<std::pair<int32_t, std::shared_ptr<CustomOp>>> customs_;
};

// RAII: pushes a tape onto this thread's active stack.
struct TapeScope {
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* tape_;
};

// Registers an optimizable value on the active tape.
DiffScalar register_parameter(double initial);

// ---- scalar operations ----

namespace detail {

inline Tape* result_tape(const DiffScalar& a, const DiffScalar& b) {
    if (a.tape && b.tape && a.tape != b.tape)
        throw ContractViolation("operands live on different tapes");
    return a.tape ? a.tape : b.tape;
}

inline DiffScalar binary(const DiffScalar& a, const DiffScalar& b, double value, double pa,
                         double pb) {
    Tape* t = result_tape(a, b);
    if (!t) return DiffScalar{value};
    return t->make(value, a.node, pa, b.node, pb);
}

inline DiffScalar unary(const DiffScalar& a, double value, double pa) {
    if (!a.tape) return DiffScalar{value};
    return a.tape->make(value, a.node, pa, -1, 0.0);
}

} // namespace detail

inline DiffScalar operator+(const DiffScalar& a, const DiffScalar& b) {
    return detail::binary(a, b, a.v + b.v, 1.0, 1.0);
}
inline DiffScalar operator-(const DiffScalar& a, const DiffScalar& b) {
    return detail::binary(a, b, a.v - b.v, 1.0, -1.0);
}
inline DiffScalar operator-(const DiffScalar& a) { return detail::unary(a, -a.v, -1.0); }
inline DiffScalar operator*(const DiffScalar& a, const DiffScalar& b) {
    return detail::binary(a, b, a.v * b.v, b.v, a.v);
}
inline DiffScalar operator/(const DiffScalar& a, const DiffScalar& b) {
    // value uses the same double division as plain code so the plain and
    // differentiable evaluation paths agree bit for bit
    const double inv = 1.0 / b.v;
    return detail::binary(a, b, a.v / b.v, inv, -a.v * inv * inv);
}

inline DiffScalar& operator+=(DiffScalar& a, const DiffScalar& b) { return a = a + b; }
inline DiffScalar& operator-=(DiffScalar& a, const DiffScalar& b) { return a = a - b; }
inline DiffScalar& operator*=(DiffScalar& a, const DiffScalar& b) { return a = a * b; }

// Merge the std overloads so templated code instantiated with plain double
// resolves to them instead of converting through DiffScalar.
using std::atan2;
using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;

inline DiffScalar sqrt(const DiffScalar& a) {
    const double s = std::sqrt(a.v);
    return detail::unary(a, s, s > 0.0 ? 0.5 / s : 0.0);
}
inline DiffScalar exp(const DiffScalar& a) {
    const double e = std::exp(a.v);
    return detail::unary(a, e, e);
}
inline DiffScalar log(const DiffScalar& a) { return detail::unary(a, std::log(a.v), 1.0 / a.v); }
inline DiffScalar sin(const DiffScalar& a) { return detail::unary(a, std::sin(a.v), std::cos(a.v)); }
inline DiffScalar cos(const DiffScalar& a) {
    return detail::unary(a, std::cos(a.v), -std::sin(a.v));
}
inline DiffScalar atan2(const DiffScalar& y, const DiffScalar& x) {
    const double d = x.v * x.v + y.v * y.v;
    return detail::binary(y, x, std::atan2(y.v, x.v), x.v / d, -y.v / d);
}

// max(x, 0) with subgradient 0 at the kink.
inline DiffScalar max_zero(const DiffScalar& a) {
    return detail::unary(a, a.v > 0.0 ? a.v : 0.0, a.v > 0.0 ? 1.0 : 0.0);
}

// Branch by value. Both branches must already be evaluated; gradients flow
// through the selected one only.
inline DiffScalar select(bool take_a, const DiffScalar& a, const DiffScalar& b) {
    return take_a ? a : b;
}

// log(1 + exp(x)), overflow-safe.
inline DiffScalar softplus(const DiffScalar& a) {
    const double sig = 1.0 / (1.0 + std::exp(-a.v));
    const double val = a.v > 30.0 ? a.v : std::log1p(std::exp(a.v));
    return detail::unary(a, val, sig);
}

// x^k for non-negative real exponent; x must be >= 0.
inline DiffScalar pow_real(const DiffScalar& a, double k) {
    if (k == 0.0) return DiffScalar{1.0};
    if (k == 1.0) return a;
    const double val = std::pow(a.v, k);
    const double pa = a.v > 0.0 ? k * val / a.v : 0.0;
    return detail::unary(a, val, pa);
}

// ---- complex values ----

struct DiffComplex {
    DiffScalar re, im;

    DiffComplex() = default;
    DiffComplex(DiffScalar r, DiffScalar i) : re(std::move(r)), im(std::move(i)) {}
    DiffComplex(double r, double i = 0.0) : re(r), im(i) {}

    bool is_const() const { return re.is_const() && im.is_const(); }
};

inline DiffComplex operator+(const DiffComplex& a, const DiffComplex& b) {
    return {a.re + b.re, a.im + b.im};
}
inline DiffComplex operator-(const DiffComplex& a, const DiffComplex& b) {
    return {a.re - b.re, a.im - b.im};
}
inline DiffComplex operator*(const DiffComplex& a, const DiffComplex& b) {
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}
inline DiffComplex operator*(const DiffScalar& s, const DiffComplex& a) {
    return {s * a.re, s * a.im};
}
inline DiffComplex operator/(const DiffComplex& a, const DiffComplex& b) {
    const DiffScalar d = b.re * b.re + b.im * b.im;
    return {(a.re * b.re + a.im * b.im) / d, (a.im * b.re - a.re * b.im) / d};
}
inline DiffComplex& operator+=(DiffComplex& a, const DiffComplex& b) { return a = a + b; }

inline DiffComplex conj(const DiffComplex& a) { return {a.re, -a.im}; }
inline DiffScalar norm2(const DiffComplex& a) { return a.re * a.re + a.im * a.im; }
inline DiffScalar abs(const DiffComplex& a) { return sqrt(norm2(a)); }

// exp(j*phi)
inline DiffComplex expj(const DiffScalar& phi) { return {cos(phi), sin(phi)}; }

// Principal square root. For Im(z) <= 0 (lossy-medium convention) the result
// has Im <= 0. Smooth away from the branch cut; z must be nonzero. Only the
// well-conditioned component goes through a real sqrt, the other is derived
// from it, which keeps the recorded graph differentiable on the positive
// real axis where the naive two-sqrt form has a spurious kink.
inline DiffComplex sqrt(const DiffComplex& z) {
    const DiffScalar m = sqrt(norm2(z));
    if (z.re.v >= 0.0) {
        const DiffScalar u = sqrt((m + z.re) * DiffScalar{0.5});
        return {u, z.im / (u * DiffScalar{2.0})};
    }
    DiffScalar w = sqrt((m - z.re) * DiffScalar{0.5});
    if (z.im.v <= 0.0) w = -w; // branch cut edge: pick Im <= 0
    return {z.im / (w * DiffScalar{2.0}), w};
}

// Gradient checkpointing: evaluates f now for its value, discards f's
// interior nodes, and re-executes f during backward to recover the local
// gradients. f must be a pure function of the active tape's registered
// parameters, accessed positionally via Tape::active().parameter(i), and must
// replay to the same value within 1e-9 relative (DivergenceError otherwise).
DiffScalar checkpoint_scope(const std::function<DiffScalar()>& f);

// Real losses only: differentiating a complex loss is a contract violation.
inline void backward(const DiffComplex&) {
    throw ContractViolation("backward: loss must be real-valued, got complex");
}

} // namespace rfd
