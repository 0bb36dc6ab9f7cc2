#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "helpers.hpp"

using namespace decentbva;
using testutil::fd_grad_input;
using testutil::fd_grad_params;
using testutil::grad_agreement;
using testutil::random_input;
using testutil::random_mlp;

TEST_CASE("softmax output is a probability vector") {
    ModelState model = random_mlp(5, {7}, 4, 1);
    Tensor x = random_input({5}, 2);
    Prediction p = forward(model, x);
    REQUIRE(p.probs.size() == 4);
    double sum = 0.0;
    for (double v : p.probs) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        sum += v;
    }
    REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("analytic loss values") {
    Prediction half{{0.5, 0.5}};
    REQUIRE(loss(half, std::size_t(0), LossKind::cross_entropy) ==
            Catch::Approx(std::log(2.0)).margin(1e-9));
    REQUIRE(entropy({0.5, 0.5}) == Catch::Approx(std::log(2.0)).margin(1e-9));
    REQUIRE(entropy({1.0, 0.0}) == Catch::Approx(0.0).margin(1e-12));
    // mse of [0.8, 0.2] against class 0: 0.04 + 0.04
    REQUIRE(loss(Prediction{{0.8, 0.2}}, std::size_t(0), LossKind::mse) ==
            Catch::Approx(0.08).margin(1e-12));
}

TEST_CASE("cross-entropy stays finite on saturated predictions") {
    ModelState model = testutil::constant_model(2, {1.0 - 1e-15, 1e-15});
    Tensor x({2}, {0.3, 0.7});
    double l = loss(forward(model, x), std::size_t(1), LossKind::cross_entropy);
    REQUIRE(std::isfinite(l));
    GradientReport g = grad_input(model, x, std::size_t(1), LossKind::cross_entropy);
    REQUIRE(all_finite(g.wrt_input));
}

TEST_CASE("parameter gradients match finite differences on an MLP") {
    for (auto kind : {LossKind::cross_entropy, LossKind::mse}) {
        ModelState model = random_mlp(4, {6}, 3, 7);
        Tensor x = random_input({4}, 8);
        const std::size_t y = 1;
        std::vector<const Tensor*> xs{&x};
        std::vector<std::size_t> ys{y};
        GradientReport analytic = grad_params(model, xs, ys, kind, nullptr);
        auto numeric = fd_grad_params(model, [&](const ModelState& m) {
            return loss(forward(m, x), y, kind);
        });
        REQUIRE(grad_agreement(analytic.wrt_params, numeric) == 1.0);
        REQUIRE(analytic.loss_value == Catch::Approx(loss(forward(model, x), y, kind)));
    }
}

TEST_CASE("parameter gradients match finite differences on a CNN") {
    ArchSpec arch;
    arch.input_shape = {1, 6, 6};
    arch.class_count = 2;
    arch.layers = {Conv2d{1, 2, 3, 1}, Relu{}, MaxPool{2, 2}, Flatten{}, Dense{2 * 2 * 2, 2},
                   Softmax{}};
    ModelState model = init_params(arch, 3);
    Tensor x = random_input({1, 6, 6}, 4);
    std::vector<const Tensor*> xs{&x};
    std::vector<std::size_t> ys{0};
    GradientReport analytic = grad_params(model, xs, ys, LossKind::cross_entropy, nullptr);
    auto numeric = fd_grad_params(model, [&](const ModelState& m) {
        return loss(forward(m, x), std::size_t(0), LossKind::cross_entropy);
    });
    REQUIRE(grad_agreement(analytic.wrt_params, numeric) >= 0.999);
}

TEST_CASE("batch gradient is the mean of per-example gradients") {
    ModelState model = random_mlp(3, {5}, 2, 11);
    Tensor x1 = random_input({3}, 12);
    Tensor x2 = random_input({3}, 13);
    auto g1 = grad_params(model, {&x1}, {0}, LossKind::cross_entropy, nullptr);
    auto g2 = grad_params(model, {&x2}, {1}, LossKind::cross_entropy, nullptr);
    auto both = grad_params(model, {&x1, &x2}, {0, 1}, LossKind::cross_entropy, nullptr);
    for (std::size_t i = 0; i < both.wrt_params.size(); ++i)
        REQUIRE(both.wrt_params[i] ==
                Catch::Approx(0.5 * (g1.wrt_params[i] + g2.wrt_params[i])).margin(1e-12));
    REQUIRE(both.loss_value ==
            Catch::Approx(0.5 * (g1.loss_value + g2.loss_value)).margin(1e-12));
}

TEST_CASE("input gradients match finite differences") {
    for (auto kind : {LossKind::cross_entropy, LossKind::mse}) {
        ModelState model = random_mlp(5, {8}, 3, 21);
        Tensor x = random_input({5}, 22);
        GradientReport analytic = grad_input(model, x, std::size_t(2), kind);
        Tensor numeric = fd_grad_input(x, [&](const Tensor& probe) {
            return loss(forward(model, probe), std::size_t(2), kind);
        });
        REQUIRE(grad_agreement(analytic.wrt_input.data, numeric.data) == 1.0);
    }
}

TEST_CASE("per-class prediction gradients match finite differences") {
    ModelState model = random_mlp(4, {6}, 3, 31);
    Tensor x = random_input({4}, 32);
    std::vector<Tensor> grads = grad_input_prediction(model, x);
    REQUIRE(grads.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        Tensor numeric = fd_grad_input(x, [&](const Tensor& probe) {
            return forward(model, probe).probs[j];
        });
        REQUIRE(grad_agreement(grads[j].data, numeric.data) == 1.0);
    }
}

TEST_CASE("prediction gradients sum to zero across classes") {
    // probabilities sum to 1, so their input gradients must cancel
    ModelState model = random_mlp(4, {5}, 3, 41);
    Tensor x = random_input({4}, 42);
    std::vector<Tensor> grads = grad_input_prediction(model, x);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double s = 0.0;
        for (const Tensor& g : grads) s += g[i];
        REQUIRE(s == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("dropout is inactive in eval mode and masks in train mode") {
    ArchSpec arch;
    arch.input_shape = {10};
    arch.class_count = 2;
    arch.layers = {Dense{10, 10}, Relu{}, Dropout{0.5}, Dense{10, 2}, Softmax{}};
    ModelState model = init_params(arch, 51);
    Tensor x = random_input({10}, 52);
    Prediction eval1 = forward(model, x);
    Prediction eval2 = forward(model, x);
    REQUIRE(eval1.probs == eval2.probs);

    RngStream rng(53);
    std::vector<const Tensor*> xs{&x};
    std::vector<std::size_t> ys{0};
    auto g1 = grad_params(model, xs, ys, LossKind::cross_entropy, &rng);
    auto g2 = grad_params(model, xs, ys, LossKind::cross_entropy, &rng);
    REQUIRE(g1.wrt_params != g2.wrt_params); // different masks, different gradients
}

TEST_CASE("train mode dropout requires a stream") {
    ArchSpec arch;
    arch.input_shape = {4};
    arch.class_count = 2;
    arch.layers = {Dense{4, 4}, Dropout{0.5}, Dense{4, 2}, Softmax{}};
    ModelState model = init_params(arch, 61);
    Tensor x = random_input({4}, 62);
    REQUIRE_NOTHROW(forward(model, x)); // eval is fine
    REQUIRE_THROWS_AS(forward(model, x, true, nullptr), Error);
}

TEST_CASE("non-finite parameters surface as numeric errors") {
    ModelState model = random_mlp(3, {4}, 2, 71);
    model.params[0] = std::numeric_limits<double>::infinity();
    Tensor x = random_input({3}, 72);
    REQUIRE_THROWS_AS(forward(model, x), NumericError);
}

TEST_CASE("sgd_step applies momentum correctly") {
    ModelState model = random_mlp(2, {}, 2, 81);
    std::vector<double> grad(model.params.size(), 1.0);
    std::vector<double> velocity;
    ModelState s1 = sgd_step(model, grad, 0.1, 0.9, velocity);
    // first step: v = g, w -= lr*g
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        REQUIRE(velocity[i] == Catch::Approx(1.0));
        REQUIRE(s1.params[i] == Catch::Approx(model.params[i] - 0.1).margin(1e-12));
    }
    ModelState s2 = sgd_step(s1, grad, 0.1, 0.9, velocity);
    // second step: v = 0.9 + 1 = 1.9
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        REQUIRE(velocity[i] == Catch::Approx(1.9));
        REQUIRE(s2.params[i] == Catch::Approx(s1.params[i] - 0.19).margin(1e-12));
    }
    std::vector<double> wrong(model.params.size() + 1, 0.0);
    REQUIRE_THROWS_AS(sgd_step(model, wrong, 0.1, 0.9, velocity), ShapeError);
}

TEST_CASE("forward rejects wrong input shapes and empty batches error") {
    ModelState model = random_mlp(3, {4}, 2, 91);
    Tensor wrong({4});
    REQUIRE_THROWS_AS(forward(model, wrong), ShapeError);
    std::vector<const Tensor*> xs;
    std::vector<std::size_t> ys;
    REQUIRE_THROWS_AS(grad_params(model, xs, ys, LossKind::cross_entropy, nullptr), Error);
}
