#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <vector>

#include "fenet/rng.hpp"
#include "fenet/tensor.hpp"

using namespace fenet;

namespace {

Var<double> leaf_vec(Tape<double>& t, std::vector<double> v, bool req = true) {
    return t.leaf(Shape::vec(static_cast<int>(v.size())), v.data(), req);
}


// Quadrature oracle for KL(q||p) between 1-dim Gaussians: Simpson's rule on
// a wide grid around q.
double kl_quadrature(double mq, double sq, double mp, double sp) {
    double lo = mq - 12.0 * sq;
    double hi = mq + 12.0 * sq;
    int n = 20000; // even
    double h = (hi - lo) / n;
    auto log_pdf = [](double x, double mu, double s) {
        double z = (x - mu) / s;
        return -0.5 * z * z - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
    };
    auto f = [&](double x) {
        double lq = log_pdf(x, mq, sq);
        if (lq < -700.0) return 0.0;
        return std::exp(lq) * (lq - log_pdf(x, mp, sp));
    };
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

DiagGaussianVar<double> make_dist(Tape<double>& t, std::vector<double> mean,
                                  std::vector<double> std) {
    return {leaf_vec(t, std::move(mean)), leaf_vec(t, std::move(std))};
}

} // namespace

TEST_CASE("relu and softplus basics") {
    Tape<double> t;
    auto x = leaf_vec(t, {-1.0, 2.0});
    auto y = t.relu(x);
    CHECK(t.values(y)[0] == 0.0);
    CHECK(t.values(y)[1] == 2.0);

    auto z = leaf_vec(t, {0.0});
    auto sp = t.softplus(z);
    CHECK(t.value0(sp) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("stop_gradient passes values bit-identically and zeroes gradients") {
    Tape<double> t;
    auto x = leaf_vec(t, {0.3, -1.7, 2.5});
    auto s = t.stop_gradient(x);
    auto xv = t.values(x);
    auto sv = t.values(s);
    CHECK(std::memcmp(xv.data(), sv.data(), sizeof(double) * 3) == 0);

    auto loss = t.sum(t.mul(s, s));
    t.backward(loss);
    for (double g : t.grad(x)) CHECK(g == 0.0);
}

TEST_CASE("shape mismatch raises dimension error") {
    Tape<double> t;
    auto a = leaf_vec(t, {1.0, 2.0});
    auto b = leaf_vec(t, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS((void)t.add(a, b), DimensionError);

    std::vector<double> w(6, 0.1);
    auto m = t.leaf(Shape::mat(2, 3), w.data(), true);
    CHECK_THROWS_AS((void)t.matmul(m, a), DimensionError);
}

TEST_CASE("non-finite forward value raises numeric error naming the op") {
    Tape<double> t;
    auto x = leaf_vec(t, {-1.0});
    try {
        (void)t.log(x);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
}

TEST_CASE("leaf off the path to the loss keeps zero gradient") {
    Tape<double> t;
    auto x = leaf_vec(t, {1.0, 2.0});
    auto unused = leaf_vec(t, {5.0});
    auto loss = t.sum(t.square(x));
    t.backward(loss);
    CHECK(t.grad(unused)[0] == 0.0);
    CHECK(t.grad(x)[0] == doctest::Approx(2.0));
    (void)unused;
}

TEST_CASE("gaussian_nll closed-form examples") {
    const double half_ln_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    {
        Tape<double> t;
        auto x = leaf_vec(t, {0.0});
        auto nll = gaussian_nll(x, make_dist(t, {0.0}, {1.0}));
        CHECK(t.value0(nll) == doctest::Approx(half_ln_2pi).epsilon(1e-9));
        CHECK(t.value0(nll) == doctest::Approx(0.9189385).epsilon(1e-6));
    }
    {
        Tape<double> t;
        auto x = leaf_vec(t, {1.0});
        auto nll = gaussian_nll(x, make_dist(t, {1.0}, {1.0}));
        CHECK(t.value0(nll) == doctest::Approx(half_ln_2pi).epsilon(1e-9));
    }
    {
        // Independent closed-form evaluation: ln s + 0.5 ln 2pi + (x-mu)^2/(2 s^2).
        double expect = std::log(0.5) + half_ln_2pi + (2.0 * 2.0) / (2.0 * 0.25);
        Tape<double> t;
        auto x = leaf_vec(t, {2.0});
        auto nll = gaussian_nll(x, make_dist(t, {0.0}, {0.5}));
        CHECK(t.value0(nll) == doctest::Approx(expect).epsilon(1e-12));
    }
    {
        Tape<double> t;
        auto x = leaf_vec(t, {0.0});
        CHECK_THROWS_AS((void)gaussian_nll(x, make_dist(t, {0.0}, {0.0})),
                        DomainError);
        CHECK_THROWS_AS((void)gaussian_nll(x, make_dist(t, {0.0}, {-1.0})),
                        DomainError);
    }
}

TEST_CASE("kl_diag_gaussian examples and quadrature oracle") {
    {
        Tape<double> t;
        auto kl = kl_diag_gaussian(make_dist(t, {0.3, -0.2}, {0.7, 1.3}),
                                   make_dist(t, {0.3, -0.2}, {0.7, 1.3}));
        CHECK(t.value0(kl) == 0.0); // exactly, identical parameters
    }
    {
        Tape<double> t;
        auto kl = kl_diag_gaussian(make_dist(t, {1.0}, {1.0}),
                                   make_dist(t, {0.0}, {1.0}));
        CHECK(t.value0(kl) == doctest::Approx(0.5).epsilon(1e-12));
    }
    {
        Tape<double> t;
        auto kl = kl_diag_gaussian(make_dist(t, {0.0}, {2.0}),
                                   make_dist(t, {0.0}, {1.0}));
        CHECK(t.value0(kl) ==
              doctest::Approx(kl_quadrature(0.0, 2.0, 0.0, 1.0)).epsilon(1e-7));
    }
    {
        Tape<double> t;
        CHECK_THROWS_AS((void)kl_diag_gaussian(make_dist(t, {0.0}, {-0.1}),
                                               make_dist(t, {0.0}, {1.0})),
                        DomainError);
    }
}

TEST_CASE("kl is nonnegative and matches quadrature on random 1-dim cases") {
    Rng rng(1234);
    for (int trial = 0; trial < 20; ++trial) {
        double mq = rng.uniform(-2.0, 2.0), sq = rng.uniform(0.2, 2.5);
        double mp = rng.uniform(-2.0, 2.0), sp = rng.uniform(0.2, 2.5);
        Tape<double> t;
        auto kl = kl_diag_gaussian(make_dist(t, {mq}, {sq}), make_dist(t, {mp}, {sp}));
        double v = t.value0(kl);
        CHECK(v >= 0.0);
        CHECK(v == doctest::Approx(kl_quadrature(mq, sq, mp, sp)).epsilon(1e-6));
    }
}

TEST_CASE("grad_check on simple closed forms") {
    {
        Param<double> x("x", Shape::vec(1));
        x.value[0] = 3.0;
        Param<double>* ps[] = {&x};
        double rel = grad_check<double>(
            [&](Tape<double>& t, auto& bind) { return t.sum(t.square(bind(x))); },
            std::span<Param<double>* const>(ps, 1), 1e-5);
        CHECK(rel < 1e-9);

        // analytic gradient is 6 at x=3
        Tape<double> t;
        auto xv = t.leaf(x, true);
        auto y = t.sum(t.square(xv));
        t.backward(y);
        CHECK(t.grad(xv)[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
}

TEST_CASE("grad of KL wrt posterior mean at unit variances is the mean itself") {
    Param<double> mq("mq", Shape::vec(1));
    mq.value[0] = 1.0;
    Param<double>* ps[] = {&mq};
    double rel = grad_check<double>(
        [&](Tape<double>& t, auto& bind) {
            DiagGaussianVar<double> q{bind(mq), leaf_vec(t, {1.0}, false)};
            auto p = make_dist(t, {0.0}, {1.0});
            return kl_diag_gaussian(q, p);
        },
        std::span<Param<double>* const>(ps, 1), 1e-6);
    CHECK(rel < 1e-8);

    Tape<double> t;
    auto mqv = t.leaf(mq, true);
    DiagGaussianVar<double> q{mqv, leaf_vec(t, {1.0}, false)};
    auto kl = kl_diag_gaussian(q, make_dist(t, {0.0}, {1.0}));
    t.backward(kl);
    CHECK(t.grad(mqv)[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clamp_min gradient is zero at and below the threshold, one above") {
    Tape<double> t;
    auto x = leaf_vec(t, {1.0, 3.0, 5.0});
    auto y = t.clamp_min(x, 3.0);
    CHECK(t.values(y)[0] == 3.0);
    CHECK(t.values(y)[1] == 3.0);
    CHECK(t.values(y)[2] == 5.0);
    auto loss = t.sum(y);
    t.backward(loss);
    CHECK(t.grad(x)[0] == 0.0);
    CHECK(t.grad(x)[1] == 0.0); // subgradient at the kink is 0
    CHECK(t.grad(x)[2] == 1.0);
}

// Every differentiable op, randomized inputs (dims <= 16), 100 trials with a
// fixed seed; the finite-difference oracle must agree to < 1e-3 in 64-bit.
TEST_CASE("per-op finite-difference sweep") {
    Rng rng(20260809);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        int n = 1 + static_cast<int>(rng.uniform_int(16));
        int m = 1 + static_cast<int>(rng.uniform_int(8));
        Param<double> a("a", Shape::vec(n));
        Param<double> b("b", Shape::vec(n));
        Param<double> w("w", Shape::mat(m, n));
        for (auto& v : a.value) v = rng.uniform(-2.0, 2.0);
        for (auto& v : b.value) v = rng.uniform(0.3, 2.0); // keeps div/log in-domain
        for (auto& v : w.value) v = rng.uniform(-1.0, 1.0);

        int which = trial % 14;
        Param<double>* ps[] = {&a, &b, &w};
        auto build = [&](Tape<double>& t, auto& bind) -> Var<double> {
            auto av = bind(a);
            auto bv = bind(b);
            switch (which) {
                case 0: return t.sum(t.add(av, bv));
                case 1: return t.sum(t.mul(av, bv));
                case 2: return t.sum(t.div(av, bv));
                case 3: return t.sum(t.tanh(av));
                case 4: return t.sum(t.softplus(av));
                case 5: return t.sum(t.exp(t.scale(av, 0.3)));
                case 6: return t.sum(t.log(bv));
                case 7: return t.mean(t.square(av));
                case 8: return t.sum(t.sigmoid(av));
                case 9: return t.sum(t.matmul(bind(w), av));
                case 10: return t.sum(t.square(t.matmul(bind(w), av)));
                case 11: return t.sum(t.slice(t.concat(av, bv), n / 2, n));
                case 12: return t.sum(t.mul(t.expand(t.mean(av), n), bv));
                case 13: return t.sum(t.sub(av, bv));
            }
            return t.sum(av);
        };
        double rel = grad_check<double>(build, std::span<Param<double>* const>(ps, 3),
                                        1e-5);
        worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-3);
}

// relu/clamp kinks get their own sweep away from the kink to keep fd honest.
TEST_CASE("relu and clamp_min finite differences away from kinks") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 1 + static_cast<int>(rng.uniform_int(12));
        Param<double> a("a", Shape::vec(n));
        for (auto& v : a.value) {
            double x = rng.uniform(-2.0, 2.0);
            if (std::abs(x) < 0.05) x = 0.1;         // keep off relu kink
            if (std::abs(x - 0.5) < 0.05) x = 0.6;   // keep off clamp kink
            v = x;
        }
        Param<double>* ps[] = {&a};
        double rel = grad_check<double>(
            [&](Tape<double>& t, auto& bind) {
                auto av = bind(a);
                return t.sum(t.add(t.relu(av), t.clamp_min(av, 0.5)));
            },
            std::span<Param<double>* const>(ps, 1), 1e-5);
        CHECK(rel < 1e-3);
    }
}

TEST_CASE("backward of the same graph built twice is bit-identical") {
    auto run = [](uint64_t seed, std::vector<double>& out) {
        Rng rng(seed);
        Param<double> w("w", Shape::mat(4, 4));
        Param<double> x("x", Shape::vec(4));
        for (auto& v : w.value) v = rng.uniform(-1.0, 1.0);
        for (auto& v : x.value) v = rng.uniform(-1.0, 1.0);
        Tape<double> t;
        auto wv = t.leaf(w, true);
        auto xv = t.leaf(x, true);
        auto h = t.tanh(t.matmul(wv, xv));
        auto loss = t.sum(t.square(h));
        t.backward(loss);
        auto gw = t.grad(wv);
        auto gx = t.grad(xv);
        out.assign(gw.begin(), gw.end());
        out.insert(out.end(), gx.begin(), gx.end());
    };
    std::vector<double> g1, g2;
    run(42, g1);
    run(42, g2);
    REQUIRE(g1.size() == g2.size());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("backward visits each node once: repeated subexpression grads add up") {
    Tape<double> t;
    auto x = leaf_vec(t, {2.0});
    auto y = t.mul(x, x);        // x^2
    auto z = t.add(y, y);        // 2 x^2
    auto loss = t.sum(z);
    t.backward(loss);
    CHECK(t.grad(x)[0] == doctest::Approx(8.0).epsilon(1e-12)); // d(2x^2)/dx = 4x
}

TEST_CASE("matmul with matrix right-hand side") {
    Tape<double> t;
    std::vector<double> av = {1, 2, 3, 4};     // 2x2
    std::vector<double> bv = {5, 6, 7, 8};     // 2x2
    auto A = t.leaf(Shape::mat(2, 2), av.data(), true);
    auto B = t.leaf(Shape::mat(2, 2), bv.data(), true);
    auto C = t.matmul(A, B);
    auto cv = t.values(C);
    CHECK(cv[0] == 19);
    CHECK(cv[1] == 22);
    CHECK(cv[2] == 43);
    CHECK(cv[3] == 50);

    Param<double> pa("a", Shape::mat(2, 2)), pb("b", Shape::mat(2, 2));
    pa.value = av;
    pb.value = bv;
    Param<double>* ps[] = {&pa, &pb};
    double rel = grad_check<double>(
        [&](Tape<double>& tt, auto& bind) {
            return tt.sum(tt.square(tt.matmul(bind(pa), bind(pb))));
        },
        std::span<Param<double>* const>(ps, 2), 1e-5);
    CHECK(rel < 1e-6);
}

TEST_CASE("float tape also works for the forward/backward basics") {
    Tape<float> t;
    std::vector<float> xs = {0.5f, -0.25f};
    auto x = t.leaf(Shape::vec(2), xs.data(), true);
    auto loss = t.sum(t.square(t.tanh(x)));
    t.backward(loss);
    CHECK(t.grad(x)[0] != 0.0f);
}
