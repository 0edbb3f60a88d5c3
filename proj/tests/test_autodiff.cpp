#include <doctest.h>

#include <cmath>

#include "ripple/tape.hpp"
#include "test_support.hpp"

using namespace ripple;
using test_support::ad_gradient;
using test_support::fd_gradient;
using test_support::GraphFn;
using test_support::max_rel_error;
using test_support::random_tensor;
using test_support::random_tensor_off_zero;

namespace {

// Reduce any op output to a scalar with fixed pseudo-random weights derived
// from the seed and shape alone, so the loss is a pure function of its inputs.
ad::Value weighted_sum(ad::Tape& tape, ad::Value v, std::uint64_t seed) {
    const ad::Tensor& out = tape.value(v);
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(out.numel())));
    ad::Tensor w(out.shape);
    for (auto& x : w.data) x = rng.normal();
    return tape.sum(tape.mul(v, tape.constant(w)));
}

void check_against_fd(const GraphFn& fn, const ad::NamedParams& params, double tol = 1e-6) {
    const ad::GradientVector got = ad_gradient(fn, params);
    const ad::GradientVector want = fd_gradient(fn, params);
    CHECK(max_rel_error(got, want) < tol);
}

}  // namespace

TEST_CASE("matmul forward matches the hand-checked 2x2 example") {
    ad::Tape tape;
    ad::Value a = tape.constant(ad::Tensor({2, 2}, {1, 2, 3, 4}));
    ad::Value b = tape.constant(ad::Tensor({2, 1}, {1, 1}));
    const ad::Tensor& out = tape.value(tape.matmul(a, b));
    CHECK(out.shape == ad::Shape{2, 1});
    CHECK(out.data[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(out.data[1] == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("cross-entropy of uniform logits over 4 classes is ln 4") {
    ad::Tape tape;
    ad::Value logits = tape.constant(ad::Tensor({1, 4}, {0.7, 0.7, 0.7, 0.7}));
    for (std::int64_t target = 0; target < 4; ++target) {
        ad::Tape t2;
        ad::Value l2 = t2.constant(ad::Tensor({1, 4}, {0.7, 0.7, 0.7, 0.7}));
        CHECK(t2.value(t2.cross_entropy(l2, {target})).data[0] ==
              doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    CHECK(tape.value(tape.cross_entropy(logits, {2})).data[0] ==
          doctest::Approx(1.3862944).epsilon(1e-6));
}

TEST_CASE("softmax of a constant row is uniform") {
    ad::Tape tape;
    const ad::Tensor& out = tape.value(tape.softmax(tape.constant(ad::Tensor({1, 3}, {0, 0, 0}))));
    for (double x : out.data) CHECK(x == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("backward of w^2 at w=3 gives 6; constants give 0") {
    ad::Tape tape;
    ad::Tensor w = ad::Tensor::scalar(3.0);
    w.requires_grad = true;
    ad::Value wv = tape.leaf(w);
    ad::Value unused = tape.leaf(w);  // contributes nothing to the output
    ad::Value loss = tape.sum(tape.mul(wv, wv));
    tape.backward(loss);
    CHECK(tape.grad(wv).data[0] == doctest::Approx(6.0).epsilon(1e-15));
    CHECK(tape.grad(unused).data[0] == 0.0);
}

TEST_CASE("finite differences: exact for quadratics, zero at |w| symmetry point") {
    ad::NamedParams params;
    params.emplace("w", ad::Tensor::scalar(3.0));
    const auto quad = ad::finite_difference_gradient(
        [](const ad::NamedParams& p) {
            const double w = p.at("w").data[0];
            return w * w;
        },
        params, 1e-5);
    CHECK(std::abs(quad.values[0] - 6.0) < 1e-9);

    ad::NamedParams at_zero;
    at_zero.emplace("w", ad::Tensor::scalar(0.0));
    const auto absval = ad::finite_difference_gradient(
        [](const ad::NamedParams& p) { return std::abs(p.at("w").data[0]); }, at_zero, 1e-5);
    CHECK(absval.values[0] == 0.0);
}

TEST_CASE("every op's backward agrees with central finite differences") {
    Rng rng(20240811);

    auto unary_case = [&](const char* name, auto make, bool off_zero = false, bool positive = false) {
        CAPTURE(name);
        for (int rep = 0; rep < 3; ++rep) {
            ad::Shape shape = rep == 0 ? ad::Shape{3, 5} : rep == 1 ? ad::Shape{2, 4} : ad::Shape{8};
            ad::Tensor x = off_zero ? random_tensor_off_zero(shape, rng, 1e-3)
                                    : random_tensor(shape, rng, 0.8);
            if (positive)
                for (auto& v : x.data) v = std::abs(v) + 0.5;
            ad::NamedParams params;
            params.emplace("x", x);
            const std::uint64_t wseed = 7 + static_cast<std::uint64_t>(rep);
            check_against_fd(
                [&](ad::Tape& tape, const std::map<std::string, ad::Value>& leaves) {
                    return weighted_sum(tape, make(tape, leaves.at("x")), wseed);
                },
                params);
        }
    };

    unary_case("relu", [](ad::Tape& t, ad::Value x) { return t.relu(x); }, /*off_zero=*/true);
    unary_case("tanh", [](ad::Tape& t, ad::Value x) { return t.tanh(x); });
    unary_case("exp", [](ad::Tape& t, ad::Value x) { return t.exp(x); });
    unary_case("log", [](ad::Tape& t, ad::Value x) { return t.log(x); }, false, /*positive=*/true);
    unary_case("softmax", [](ad::Tape& t, ad::Value x) { return t.softmax(x); });
    unary_case("layer_norm", [](ad::Tape& t, ad::Value x) { return t.layer_norm(x); });
    unary_case("scalar_mul", [](ad::Tape& t, ad::Value x) { return t.scalar_mul(x, -1.7); });
    unary_case("transpose2d", [](ad::Tape& t, ad::Value x) {
        const ad::Tensor& v = t.value(x);
        return v.rank() == 2 ? t.transpose(x) : x;
    });

    SUBCASE("sum and mean") {
        ad::NamedParams params;
        params.emplace("x", random_tensor({4, 3}, rng));
        check_against_fd([](ad::Tape& t, const auto& l) { return t.sum(l.at("x")); }, params);
        check_against_fd([](ad::Tape& t, const auto& l) { return t.mean(l.at("x")); }, params);
    }

    SUBCASE("add, sub, mul with equal shapes and suffix broadcast") {
        ad::NamedParams params;
        params.emplace("a", random_tensor({4, 6}, rng));
        params.emplace("b", random_tensor({4, 6}, rng));
        params.emplace("bias", random_tensor({6}, rng));
        check_against_fd(
            [&](ad::Tape& t, const auto& l) {
                ad::Value mixed = t.mul(t.add(l.at("a"), l.at("bias")), l.at("b"));
                ad::Value scaled = t.mul(t.sub(l.at("a"), l.at("b")), l.at("bias"));
                return weighted_sum(t, t.add(mixed, scaled), 11);
            },
            params);
    }

    SUBCASE("matmul") {
        ad::NamedParams params;
        params.emplace("a", random_tensor({3, 4}, rng));
        params.emplace("b", random_tensor({4, 5}, rng));
        check_against_fd(
            [&](ad::Tape& t, const auto& l) {
                return weighted_sum(t, t.matmul(l.at("a"), l.at("b")), 13);
            },
            params);
    }

    SUBCASE("embedding") {
        ad::NamedParams params;
        params.emplace("table", random_tensor({7, 4}, rng));
        check_against_fd(
            [&](ad::Tape& t, const auto& l) {
                return weighted_sum(t, t.embedding(l.at("table"), {1, 3, 3, 0, 6}), 17);
            },
            params);
    }

    SUBCASE("squared_error and cross_entropy") {
        ad::NamedParams params;
        params.emplace("a", random_tensor({5, 2}, rng));
        params.emplace("b", random_tensor({5, 2}, rng));
        check_against_fd(
            [](ad::Tape& t, const auto& l) { return t.squared_error(l.at("a"), l.at("b")); }, params);

        ad::NamedParams ce;
        ce.emplace("logits", random_tensor({4, 6}, rng));
        check_against_fd(
            [](ad::Tape& t, const auto& l) { return t.cross_entropy(l.at("logits"), {5, 0, 2, 2}); },
            ce);
    }

    SUBCASE("slices, concat, replace_row") {
        ad::NamedParams params;
        params.emplace("a", random_tensor({5, 6}, rng));
        params.emplace("b", random_tensor({5, 2}, rng));
        params.emplace("v", random_tensor({12}, rng));
        check_against_fd(
            [&](ad::Tape& t, const auto& l) {
                ad::Value joined = t.concat_cols({t.slice_cols(l.at("a"), 1, 5),
                                                  t.slice_rows(l.at("a"), 0, 5), l.at("b")});
                ad::Value patched = t.replace_row(joined, 2, l.at("v"));
                return weighted_sum(t, patched, 19);
            },
            params);
    }
}

TEST_CASE("gradient is linear in the loss") {
    Rng rng(555);
    ad::NamedParams params;
    params.emplace("x", random_tensor({3, 3}, rng));
    const double a = 1.7, b = -0.4;

    GraphFn l1 = [](ad::Tape& t, const auto& l) { return t.sum(t.tanh(l.at("x"))); };
    GraphFn l2 = [](ad::Tape& t, const auto& l) { return t.squared_error(l.at("x"), t.constant(ad::Tensor({3, 3}, 0.3))); };
    GraphFn combined = [&](ad::Tape& t, const auto& l) {
        return t.add(t.scalar_mul(l1(t, l), a), t.scalar_mul(l2(t, l), b));
    };

    const auto g1 = ad_gradient(l1, params);
    const auto g2 = ad_gradient(l2, params);
    const auto gc = ad_gradient(combined, params);
    for (size_t i = 0; i < gc.values.size(); ++i)
        CHECK(std::abs(gc.values[i] - (a * g1.values[i] + b * g2.values[i])) < 1e-12);
}

TEST_CASE("forward and backward are bit-deterministic") {
    auto run = [] {
        Rng rng(99);
        ad::NamedParams params;
        params.emplace("a", random_tensor({4, 4}, rng));
        params.emplace("b", random_tensor({4, 4}, rng));
        return ad_gradient(
            [](ad::Tape& t, const auto& l) {
                return t.sum(t.softmax(t.matmul(t.tanh(l.at("a")), l.at("b"))));
            },
            params);
    };
    const auto g1 = run();
    const auto g2 = run();
    CHECK(g1.values == g2.values);
}

TEST_CASE("shape and numeric error paths") {
    ad::Tape tape;
    ad::Value a = tape.constant(ad::Tensor({2, 3}, 1.0));
    ad::Value b = tape.constant(ad::Tensor({3, 3}, 1.0));
    CHECK_THROWS_AS((void)tape.add(a, b), std::invalid_argument);
    CHECK_THROWS_AS((void)tape.matmul(a, a), std::invalid_argument);
    CHECK_THROWS_AS((void)tape.embedding(a, {5}), std::invalid_argument);
    CHECK_THROWS_AS((void)tape.cross_entropy(a, {0}), std::invalid_argument);

    // overflow to Inf is a hard error, not a value
    CHECK_THROWS_AS((void)tape.exp(tape.constant(ad::Tensor({1}, {800.0}))), ad::NumericError);
    CHECK_THROWS_AS((void)tape.log(tape.constant(ad::Tensor({1}, {-1.0}))), ad::NumericError);

    // backward demands a scalar output
    ad::Tape t2;
    ad::Tensor x({2, 2}, 1.0);
    x.requires_grad = true;
    ad::Value xv = t2.leaf(x);
    CHECK_THROWS_AS(t2.backward(xv), std::invalid_argument);
}
