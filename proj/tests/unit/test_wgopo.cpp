#include "doctest_torch.hpp"

#include "p2mark/errors.hpp"
#include "p2mark/wgopo.hpp"

#include <Eigen/Dense>

using namespace p2mark;

namespace {

GradientVector vec(std::vector<double> v) {
    auto t = torch::tensor(v, torch::kFloat64);
    return GradientVector{t, {{"p", {static_cast<int64_t>(v.size())}}}};
}

GradientVector random_vec(int64_t dim, torch::Dtype dtype = torch::kFloat64) {
    return GradientVector{torch::randn({dim}, dtype), {{"p", {dim}}}};
}

// Orthogonal projection onto the hyperplane h^T v = 0 through an explicit null-space basis.
Eigen::VectorXd nullspace_projection(const Eigen::VectorXd& g, const Eigen::VectorXd& h) {
    Eigen::MatrixXd row = h.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(row);
    Eigen::MatrixXd n = lu.kernel();
    Eigen::MatrixXd gram = n.transpose() * n;
    return n * gram.ldlt().solve(n.transpose() * g);
}

Eigen::VectorXd to_eigen(const torch::Tensor& t) {
    auto c = t.to(torch::kFloat64).contiguous();
    return Eigen::Map<const Eigen::VectorXd>(c.data_ptr<double>(), c.numel());
}

}  // namespace

TEST_CASE("flattening follows the declared order, row-major") {
    NamedTensors grads{{"w", torch::tensor({{1.0F, 2.0F}, {3.0F, 4.0F}})}};
    auto g = flatten_gradients(grads, layout_of(grads));
    CHECK(torch::equal(g.values, torch::tensor({1.0F, 2.0F, 3.0F, 4.0F})));

    NamedTensors two{{"a", torch::zeros({3})}, {"b", torch::zeros({2})}};
    CHECK(flatten_gradients(two, layout_of(two)).size() == 5);
}

TEST_CASE("flatten and unflatten round-trip bitwise") {
    torch::manual_seed(1);
    NamedTensors grads{{"a", torch::randn({3, 4})}, {"b", torch::randn({5})}, {"c", torch::randn({2, 1, 3})}};
    auto back = unflatten_gradients(flatten_gradients(grads, layout_of(grads)));
    REQUIRE(back.size() == grads.size());
    for (size_t i = 0; i < grads.size(); ++i) {
        CHECK(back[i].first == grads[i].first);
        CHECK(torch::equal(back[i].second, grads[i].second));
    }
}

TEST_CASE("layout mismatches are rejected") {
    NamedTensors grads{{"a", torch::zeros({3})}};
    auto layout = layout_of(grads);
    CHECK_THROWS_AS(flatten_gradients({{"b", torch::zeros({3})}}, layout), LayoutError);
    CHECK_THROWS_AS(flatten_gradients({{"a", torch::zeros({4})}}, layout), LayoutError);
    CHECK_THROWS_AS(flatten_gradients({}, layout), LayoutError);
    GradientVector x{torch::zeros({3}), layout};
    GradientVector y{torch::zeros({3}), {{"z", {3}}}};
    CHECK_THROWS_AS(project(x, y), LayoutError);
}

TEST_CASE("projection hand cases") {
    auto orth = project(vec({0, 1}), vec({1, 0}));
    CHECK(torch::equal(orth.values, torch::tensor({0.0, 1.0}, torch::kFloat64)));

    auto hand = project(vec({-1, 1}), vec({1, 0}));
    CHECK(torch::equal(hand.values, torch::tensor({0.0, 1.0}, torch::kFloat64)));

    auto opposed = project(vec({-2, 4, 1}), vec({2, -4, -1}));
    CHECK(opposed.values.abs().max().item<double>() < 1e-15);
}

TEST_CASE("projection satisfies the constraint and is idempotent") {
    torch::manual_seed(2);
    for (int64_t dim : {2, 10, 1000}) {
        for (int k = 0; k < 50; ++k) {
            auto g = random_vec(dim);
            auto h = random_vec(dim);
            auto p = project(g, h);
            const double dot = torch::dot(p.values, h.values).item<double>();
            CHECK(dot >= -1e-9 * p.values.norm().item<double>() * h.values.norm().item<double>());
            auto pp = project(p, h);
            CHECK((pp.values - p.values).abs().max().item<double>() <= 1e-12);
        }
    }
}

TEST_CASE("no-op branch returns the generator gradient bitwise") {
    torch::manual_seed(3);
    for (int k = 0; k < 50; ++k) {
        auto g = random_vec(16, torch::kFloat32);
        auto h = random_vec(16, torch::kFloat32);
        if (torch::dot(g.values.to(torch::kFloat64), h.values.to(torch::kFloat64)).item<double>() < 0) h.values = -h.values;
        auto p = project(g, h);
        CHECK(torch::equal(p.values, g.values));
        CHECK(!gradients_conflict(g, h));
    }
}

TEST_CASE("conflicting projection equals the null-space oracle") {
    torch::manual_seed(4);
    int conflicts = 0;
    for (int k = 0; k < 60; ++k) {
        auto g = random_vec(10);
        auto h = random_vec(10);
        if (!gradients_conflict(g, h)) continue;
        ++conflicts;
        const auto oracle = nullspace_projection(to_eigen(g.values), to_eigen(h.values));
        const auto got = to_eigen(project(g, h).values);
        CHECK((oracle - got).cwiseAbs().maxCoeff() < 1e-10);
        // Minimal change: no other point on the boundary is closer to g.
        const auto gv = to_eigen(g.values);
        for (int j = 0; j < 5; ++j) {
            Eigen::VectorXd v = nullspace_projection(Eigen::VectorXd::Random(10), to_eigen(h.values));
            CHECK((got - gv).norm() <= (v - gv).norm() + 1e-12);
        }
    }
    CHECK(conflicts > 10);
}

TEST_CASE("projector enforces the capture/apply sequence") {
    auto p = torch::zeros({2}, torch::requires_grad());
    NamedTensors params{{"p", p}};
    GradientProjector proj(true);
    CHECK_THROWS_AS(proj.apply(params), SequencingError);

    p.mutable_grad() = torch::tensor({1.0F, 0.0F});
    proj.capture(params);
    p.mutable_grad().copy_(torch::tensor({-1.0F, 1.0F}));
    CHECK(proj.apply(params));
    CHECK(torch::equal(p.grad(), torch::tensor({0.0F, 1.0F})));
    CHECK(proj.fired_count() == 1);
    CHECK_THROWS_AS(proj.apply(params), SequencingError);
}

TEST_CASE("disabled projector never rewrites gradients") {
    auto p = torch::zeros({2}, torch::requires_grad());
    NamedTensors params{{"p", p}};
    GradientProjector proj(false);
    p.mutable_grad() = torch::tensor({1.0F, 0.0F});
    proj.capture(params);
    p.mutable_grad().copy_(torch::tensor({-1.0F, 1.0F}));
    CHECK(!proj.apply(params));
    CHECK(torch::equal(p.grad(), torch::tensor({-1.0F, 1.0F})));
    CHECK(proj.fired_count() == 0);
    CHECK(proj.step_count() == 1);
}
