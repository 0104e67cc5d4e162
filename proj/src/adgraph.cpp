#include "rfd/adgraph.hpp"

#include <cmath>

namespace rfd {

namespace {
thread_local std::vector<Tape*> g_active_stack;
} // namespace

Tape& Tape::active() {
    if (g_active_stack.empty())
        throw ConfigError("no active tape: wrap the computation in a TapeScope");
    return *g_active_stack.back();
}

Tape* Tape::active_or_null() {
    return g_active_stack.empty() ? nullptr : g_active_stack.back();
}

TapeScope::TapeScope(Tape& t) : tape_(&t) { g_active_stack.push_back(tape_); }

TapeScope::~TapeScope() { g_active_stack.pop_back(); }

DiffScalar register_parameter(double initial) {
    return Tape::active().register_parameter(initial);
}

namespace {

// Replays `f` on a fresh tape that mirrors the outer tape's parameters
// (same order, same values) and returns the inner tape plus f's output.
struct Replay {
    Tape tape;
    DiffScalar out;
};

std::unique_ptr<Replay> replay_fn(const Tape& outer, const std::function<DiffScalar()>& f) {
    auto r = std::make_unique<Replay>();
    TapeScope scope(r->tape);
    for (size_t i = 0; i < outer.parameter_count(); ++i)
        r->tape.register_parameter(outer.parameter_value(i));
    r->out = f();
    return r;
}

class CheckpointOp final : public CustomOp {
public:
    CheckpointOp(std::function<DiffScalar()> f, double recorded)
        : f_(std::move(f)), recorded_(recorded) {}

    void backward(Tape& tape, int32_t /*node*/, double adjoint) override {
        auto r = replay_fn(tape, f_);
        const double replayed = r->out.value();
        const double tol = 1e-9 * std::max(1.0, std::abs(recorded_));
        if (!(std::abs(replayed - recorded_) <= tol))
            throw DivergenceError("checkpoint replay diverged: recorded " +
                                  std::to_string(recorded_) + ", replayed " +
                                  std::to_string(replayed));
        r->tape.backward(r->out);
        const std::vector<double> g = r->tape.parameter_gradients();
        for (size_t i = 0; i < g.size(); ++i) {
            if (g[i] != 0.0) tape.add_adjoint(tape.parameter(i).node, adjoint * g[i]);
        }
    }

private:
    std::function<DiffScalar()> f_;
    double recorded_;
};

} // namespace

DiffScalar checkpoint_scope(const std::function<DiffScalar()>& f) {
    Tape& outer = Tape::active();
    const auto r = replay_fn(outer, f);
    const double value = r->out.value();
    const int32_t id = outer.push_custom(value, std::make_shared<CheckpointOp>(f, value));
    return DiffScalar{value, id, &outer};
}

} // namespace rfd
