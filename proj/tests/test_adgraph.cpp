#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <vector>

#include "rfd/adgraph.hpp"
#include "rfd/rng.hpp"
#include "support.hpp"

using namespace rfd;
using rfdtest::central_fd;
using rfdtest::rel_err;

TEST_CASE("parameter registration and basic backward") {
    Tape tape;
    TapeScope scope(tape);
    DiffScalar x = register_parameter(3.0);
    DiffScalar y = x * x;
    tape.backward(y);
    CHECK(y.value() == doctest::Approx(9.0));
    CHECK(tape.gradient(x) == doctest::Approx(6.0));
}

TEST_CASE("gradient of Re(exp(j*phi)) matches the FD oracle") {
    const double phi0 = 0.3;
    auto f = [](double phi) { return std::cos(phi); }; // Re(exp(j*phi))
    const double fd = central_fd(f, phi0, 1e-6);

    Tape tape;
    TapeScope scope(tape);
    DiffScalar phi = register_parameter(phi0);
    DiffComplex z = expj(phi);
    tape.backward(z.re);
    const double got = tape.gradient(phi);
    CHECK(rel_err(got, fd) < 1e-5);
    CHECK(got == doctest::Approx(-std::sin(0.3)).epsilon(1e-12));
    CHECK(got == doctest::Approx(-0.29552020666).epsilon(1e-9));
}

TEST_CASE("gradient of |exp(j*phi)|^2 is zero") {
    Tape tape;
    TapeScope scope(tape);
    DiffScalar phi = register_parameter(0.7);
    DiffScalar L = norm2(expj(phi));
    tape.backward(L);
    CHECK(L.value() == doctest::Approx(1.0));
    CHECK(std::abs(tape.gradient(phi)) < 1e-14);
}

TEST_CASE("every primitive matches central finite differences") {
    struct Prim {
        const char* name;
        double (*plain)(double);
        DiffScalar (*diff)(const DiffScalar&);
        double lo, hi;
    };
    auto sqrt_p = +[](double x) { return std::sqrt(x); };
    auto exp_p = +[](double x) { return std::exp(x); };
    auto log_p = +[](double x) { return std::log(x); };
    auto sin_p = +[](double x) { return std::sin(x); };
    auto cos_p = +[](double x) { return std::cos(x); };
    auto sp_p = +[](double x) { return std::log1p(std::exp(x)); };
    const Prim prims[] = {
        {"sqrt", sqrt_p, +[](const DiffScalar& x) { return sqrt(x); }, 0.1, 4.0},
        {"exp", exp_p, +[](const DiffScalar& x) { return exp(x); }, -2.0, 2.0},
        {"log", log_p, +[](const DiffScalar& x) { return log(x); }, 0.1, 4.0},
        {"sin", sin_p, +[](const DiffScalar& x) { return sin(x); }, -3.0, 3.0},
        {"cos", cos_p, +[](const DiffScalar& x) { return cos(x); }, -3.0, 3.0},
        {"softplus", sp_p, +[](const DiffScalar& x) { return softplus(x); }, -4.0, 4.0},
    };
    for (const Prim& p : prims) {
        for (int k = 0; k < 20; ++k) {
            const double x0 = p.lo + (p.hi - p.lo) * rng_uniform(42, k, 0);
            Tape tape;
            TapeScope scope(tape);
            DiffScalar x = register_parameter(x0);
            tape.backward(p.diff(x));
            const double fd = central_fd([&](double v) { return p.plain(v); }, x0);
            INFO(p.name << " at " << x0);
            CHECK(rel_err(tape.gradient(x), fd) < 1e-5);
        }
    }
    // Binary primitives.
    for (int k = 0; k < 20; ++k) {
        const double a0 = -2.0 + 4.0 * rng_uniform(7, k, 1);
        const double b0 = 0.5 + 2.0 * rng_uniform(7, k, 2);
        Tape tape;
        TapeScope scope(tape);
        DiffScalar a = register_parameter(a0);
        DiffScalar b = register_parameter(b0);
        DiffScalar L = a / b + a * b - b + atan2(a, b);
        tape.backward(L);
        auto f = [](double av, double bv) {
            return av / bv + av * bv - bv + std::atan2(av, bv);
        };
        const double fa = central_fd([&](double v) { return f(v, b0); }, a0);
        const double fb = central_fd([&](double v) { return f(a0, v); }, b0);
        CHECK(rel_err(tape.gradient(a), fa) < 1e-5);
        CHECK(rel_err(tape.gradient(b), fb) < 1e-5);
    }
}

TEST_CASE("gradients accumulate additively across shared subexpressions") {
    Tape tape;
    TapeScope scope(tape);
    DiffScalar x = register_parameter(1.5);
    DiffScalar y = x + x + x;
    tape.backward(y);
    CHECK(tape.gradient(x) == doctest::Approx(3.0));
}

TEST_CASE("complex arithmetic gradients (Wirtinger-consistent components)") {
    // L = Re(z * conj(w)) => dL/dz.re = w.re, dL/dz.im = w.im.
    Tape tape;
    TapeScope scope(tape);
    DiffScalar zr = register_parameter(0.3), zi = register_parameter(-0.8);
    DiffScalar wr = register_parameter(1.7), wi = register_parameter(0.4);
    DiffComplex z{zr, zi}, w{wr, wi};
    DiffScalar L = (z * conj(w)).re;
    tape.backward(L);
    CHECK(tape.gradient(zr) == doctest::Approx(1.7));
    CHECK(tape.gradient(zi) == doctest::Approx(0.4));
    CHECK(tape.gradient(wr) == doctest::Approx(0.3));
    CHECK(tape.gradient(wi) == doctest::Approx(-0.8));
}

TEST_CASE("complex sqrt: principal branch with non-positive imaginary part for lossy inputs") {
    Tape tape;
    TapeScope scope(tape);
    DiffScalar re = register_parameter(2.0), im = register_parameter(-3.0);
    DiffComplex r = sqrt(DiffComplex{re, im});
    CHECK(r.im.value() <= 0.0);
    // (re + j im) recovered by squaring.
    DiffComplex sq = r * r;
    CHECK(sq.re.value() == doctest::Approx(2.0));
    CHECK(sq.im.value() == doctest::Approx(-3.0));
    // Gradient vs FD, away from the branch cut.
    tape.backward(r.re);
    const double fd = central_fd(
        [](double x) {
            const std::complex<double> z{x, -3.0};
            return std::sqrt(z).real();
        },
        2.0);
    CHECK(rel_err(tape.gradient(re), fd) < 1e-5);
}

TEST_CASE("constants fold and carry zero gradient") {
    DiffScalar a{2.0}, b{3.0};
    DiffScalar c = a * b + sqrt(a);
    CHECK(c.is_const());
    CHECK(c.value() == doctest::Approx(6.0 + std::sqrt(2.0)));

    Tape tape;
    TapeScope scope(tape);
    DiffScalar x = register_parameter(1.0);
    DiffScalar y = x * c; // mixing constant and parameter
    tape.backward(y);
    CHECK(tape.gradient(x) == doctest::Approx(c.value()));
    CHECK(tape.gradient(c) == 0.0);
}

TEST_CASE("complex-valued loss is rejected") {
    Tape tape;
    TapeScope scope(tape);
    DiffScalar phi = register_parameter(0.1);
    DiffComplex z = expj(phi);
    CHECK_THROWS_AS(backward(z), ContractViolation);
}

TEST_CASE("registering a parameter without an active tape is a configuration error") {
    CHECK_THROWS_AS(register_parameter(1.0), ConfigError);
}

TEST_CASE("operands from different tapes are rejected") {
    Tape t1, t2;
    DiffScalar a, b;
    {
        TapeScope s1(t1);
        a = register_parameter(1.0);
    }
    {
        TapeScope s2(t2);
        b = register_parameter(2.0);
    }
    CHECK_THROWS_AS(a + b, ContractViolation);
}

TEST_CASE("identical traces produce bit-identical gradients") {
    auto run = [](std::vector<double>& grads) {
        Tape tape;
        TapeScope scope(tape);
        DiffScalar x = register_parameter(0.37);
        DiffScalar y = register_parameter(-1.2);
        DiffScalar L{0.0};
        for (int i = 0; i < 50; ++i) {
            const DiffScalar w{rng_uniform(9, i)};
            L += w * sin(x * DiffScalar{static_cast<double>(i)} + y) / (DiffScalar{1.0} + x * x);
        }
        tape.backward(L);
        grads = tape.parameter_gradients();
    };
    std::vector<double> g1, g2;
    run(g1);
    run(g2);
    REQUIRE(g1.size() == g2.size());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("backward_seeded combines seeds linearly") {
    Tape tape;
    TapeScope scope(tape);
    DiffScalar x = register_parameter(0.8);
    DiffScalar u = x * x;       // du/dx = 1.6
    DiffScalar w = sin(x);      // dw/dx = cos(0.8)
    const std::pair<int32_t, double> seeds[] = {{u.node, 2.0}, {w.node, -3.0}};
    tape.backward_seeded(seeds);
    CHECK(tape.gradient(x) == doctest::Approx(2.0 * 1.6 - 3.0 * std::cos(0.8)));
}

// ---- checkpointing ----

static DiffScalar expensive_block() {
    Tape& t = Tape::active();
    DiffScalar a = t.parameter(0);
    DiffScalar b = t.parameter(1);
    DiffScalar acc{0.0};
    for (int i = 0; i < 200; ++i) {
        acc += sin(a * DiffScalar{0.01 * i}) * exp(b * DiffScalar{-0.005 * i});
    }
    return acc;
}

TEST_CASE("checkpoint_scope: same value and gradient, fewer retained nodes") {
    double direct_val, direct_ga, direct_gb;
    size_t direct_nodes;
    {
        Tape tape;
        TapeScope scope(tape);
        register_parameter(0.9);
        register_parameter(0.4);
        DiffScalar out = expensive_block();
        direct_nodes = tape.size();
        tape.backward(out);
        direct_val = out.value();
        direct_ga = tape.adjoint(tape.parameter(0).node);
        direct_gb = tape.adjoint(tape.parameter(1).node);
    }
    {
        Tape tape;
        TapeScope scope(tape);
        register_parameter(0.9);
        register_parameter(0.4);
        DiffScalar out = checkpoint_scope(expensive_block);
        CHECK(tape.size() < direct_nodes / 10); // interior nodes not retained
        tape.backward(out);
        CHECK(out.value() == doctest::Approx(direct_val).epsilon(1e-12));
        CHECK(tape.adjoint(tape.parameter(0).node) == doctest::Approx(direct_ga).epsilon(1e-12));
        CHECK(tape.adjoint(tape.parameter(1).node) == doctest::Approx(direct_gb).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint_scope: deterministic RNG inside the block replays cleanly") {
    Tape tape;
    TapeScope scope(tape);
    DiffScalar x = register_parameter(2.0);
    auto block = []() {
        DiffScalar v = Tape::active().parameter(0);
        DiffScalar acc{0.0};
        for (int i = 0; i < 16; ++i) acc += v * DiffScalar{rng_uniform(123, i)};
        return acc;
    };
    DiffScalar out = checkpoint_scope(block);
    tape.backward(out);
    double s = 0.0;
    for (int i = 0; i < 16; ++i) s += rng_uniform(123, i);
    CHECK(tape.gradient(x) == doctest::Approx(s).epsilon(1e-12));
}

TEST_CASE("checkpoint_scope: impure block triggers divergence detection") {
    Tape tape;
    TapeScope scope(tape);
    register_parameter(1.0);
    int calls = 0;
    auto impure = [&calls]() {
        ++calls;
        return Tape::active().parameter(0) * DiffScalar{static_cast<double>(calls)};
    };
    DiffScalar out = checkpoint_scope(impure);
    CHECK_THROWS_AS(tape.backward(out), DivergenceError);
}

TEST_CASE("checkpoint_scope: nested checkpoints compose") {
    auto inner = []() { return sqrt(Tape::active().parameter(0)); };
    auto outer_fn = [inner]() {
        DiffScalar r = checkpoint_scope(inner);
        return r * r * Tape::active().parameter(0); // = p^2
    };
    Tape tape;
    TapeScope scope(tape);
    DiffScalar p = register_parameter(3.0);
    DiffScalar out = checkpoint_scope(outer_fn);
    tape.backward(out);
    CHECK(out.value() == doctest::Approx(9.0));
    CHECK(tape.gradient(p) == doctest::Approx(6.0).epsilon(1e-9));
}
