#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "extremal/gradcheck.hpp"
#include "extremal/graph.hpp"
#include "extremal/io.hpp"
#include "extremal/rng.hpp"
#include "extremal/tensor.hpp"

using namespace extremal;

namespace {

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "extremal_unit_core";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("tensor shape and data invariants") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), InvalidInput);
    CHECK_THROWS_AS(Tensor({0, 3}), InvalidInput);
    CHECK(Tensor::ones({4}).all_finite());
}

TEST_CASE("elementwise examples") {
    Graph g;
    Var a = g.leaf(Tensor({2}, {1.0f, 2.0f}));
    Var b = g.leaf(Tensor({2}, {3.0f, 4.0f}));
    const Tensor& sum = g.value(g.add(a, b));
    CHECK(sum[0] == 4.0f);
    CHECK(sum[1] == 6.0f);

    Var x = g.leaf(Tensor({3}, {0.5f, -1.0f, 2.0f}));
    const Tensor& same = g.value(g.mul(x, g.constant_scalar(1.0f)));
    CHECK(same[0] == 0.5f);
    CHECK(same[1] == -1.0f);
    CHECK(same[2] == 2.0f);

    CHECK(g.value(g.exp(g.constant(Tensor({1}, {0.0f}))))[0] == doctest::Approx(1.0));

    Var mismatched = g.leaf(Tensor({3}, {1.0f, 1.0f, 1.0f}));
    CHECK_THROWS_AS(g.add(a, mismatched), InvalidInput);
}

TEST_CASE("reduce examples") {
    Graph g;
    CHECK(g.value(g.sum(g.leaf(Tensor({3}, {1.0f, 2.0f, 3.0f}))))[0] == 6.0f);
    CHECK(g.value(g.mean(g.leaf(Tensor({2}, {2.0f, 4.0f}))))[0] == 3.0f);

    std::int64_t arg = -1;
    Var m = g.max_all(g.leaf(Tensor({3}, {1.0f, 5.0f, 2.0f})), &arg);
    CHECK(g.value(m)[0] == 5.0f);
    CHECK(arg == 1);
}

TEST_CASE("conv2d identity and constant kernels") {
    Graph g;
    Rng rng(3);
    Tensor img = rng.uniform_tensor({5, 7}, -1.0f, 1.0f);
    Var out = g.conv2d(g.leaf(img), g.constant(Tensor({1, 1}, {1.0f})), Padding::Zero);
    for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(g.value(out)[i] == img[i]);

    // A kernel normalized to sum one maps a constant image to itself.
    Tensor box = Tensor::full({3, 3}, 1.0f / 9.0f);
    Var flat = g.conv2d(g.leaf(Tensor::full({4, 4}, 0.7f)), g.constant(box), Padding::Replicate);
    for (std::int64_t i = 0; i < 16; ++i) CHECK(g.value(flat)[i] == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("conv2d ramp center equals the window mean") {
    // 3x3 ramp 1..9 under a box kernel: the center output is the 9-term sum
    // (1+2+...+9)/9 = 5, evaluated by hand.
    Graph g;
    Tensor ramp({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Var out = g.conv2d(g.leaf(ramp), g.constant(Tensor::full({3, 3}, 1.0f / 9.0f)), Padding::Zero);
    CHECK(g.value(out).at(1, 1) == doctest::Approx(5.0));
}

TEST_CASE("conv2d mean preservation under replicate padding") {
    Rng rng(11);
    Tensor img = rng.uniform_tensor({6, 6}, 0.0f, 1.0f);
    Tensor kernel = rng.uniform_tensor({3, 3}, 0.0f, 1.0f);
    double ksum = 0.0;
    for (float v : kernel.data()) ksum += v;
    for (auto& v : kernel.data()) v = static_cast<float>(v / ksum);

    Graph g;
    const Tensor& out = g.value(g.conv2d(g.leaf(img), g.constant(kernel), Padding::Replicate));
    double min_in = 1e9, max_in = -1e9, mean_out = 0.0;
    for (float v : img.data()) { min_in = std::min<double>(min_in, v); max_in = std::max<double>(max_in, v); }
    for (float v : out.data()) mean_out += v;
    mean_out /= out.numel();
    CHECK(mean_out >= min_in);
    CHECK(mean_out <= max_in);
}

TEST_CASE("conv2d input validation") {
    Graph g;
    Var img = g.leaf(Tensor::ones({4, 4}));
    CHECK_THROWS_AS(g.conv2d(img, g.constant(Tensor::ones({2, 2})), Padding::Zero), InvalidInput);
    Var chw = g.leaf(Tensor::ones({2, 4, 4}));
    CHECK_THROWS_AS(g.conv2d(chw, g.constant(Tensor::ones({1, 3, 3, 3})), Padding::Zero), InvalidInput);
}

TEST_CASE("sort with permutation examples") {
    Graph g;
    std::vector<std::int64_t> perm;
    Var s = g.sort_with_permutation(g.leaf(Tensor({3}, {0.3f, 0.1f, 0.9f})), &perm);
    CHECK(g.value(s)[0] == 0.1f);
    CHECK(g.value(s)[1] == 0.3f);
    CHECK(g.value(s)[2] == 0.9f);
    CHECK(perm == std::vector<std::int64_t>{1, 0, 2});

    g.sort_with_permutation(g.leaf(Tensor({3}, {1.0f, 2.0f, 3.0f})), &perm);
    CHECK(perm == std::vector<std::int64_t>{0, 1, 2});

    g.sort_with_permutation(g.leaf(Tensor({2}, {0.5f, 0.5f})), &perm);
    CHECK(perm == std::vector<std::int64_t>{0, 1});  // stable on ties
}

TEST_CASE("sort permutation recovers the sorted output exactly") {
    Rng rng(5);
    Tensor v = rng.uniform_tensor({64}, -3.0f, 3.0f);
    Graph g;
    std::vector<std::int64_t> perm;
    const Tensor& sorted = g.value(g.sort_with_permutation(g.leaf(v), &perm));
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        CHECK(sorted[i] == v[perm[static_cast<std::size_t>(i)]]);
    }
}

TEST_CASE("backward basics") {
    Graph g;
    Var x = g.leaf(Tensor({2}, {1.5f, -0.5f}));
    g.backward(g.sum(x));
    CHECK(g.grad(x)[0] == 1.0f);
    CHECK(g.grad(x)[1] == 1.0f);

    Graph g2;
    Var y = g2.leaf(Tensor({1}, {3.0f}));
    g2.backward(g2.mul(y, y));
    CHECK(g2.grad(y)[0] == 6.0f);

    Graph g3;
    Var z = g3.leaf(Tensor({2, 2}));
    CHECK_THROWS_AS(g3.backward(z), InvalidInput);
}

TEST_CASE("backward resets adjoints between calls") {
    Graph g;
    Var x = g.leaf(Tensor({2}, {1.0f, 2.0f}));
    Var root = g.sum(x);
    g.backward(root);
    g.backward(root);
    CHECK(g.grad(x)[0] == 1.0f);  // no accumulation across calls
}

TEST_CASE("random composite gradient matches finite differences") {
    Rng rng(21);
    Tensor x0 = rng.uniform_tensor({6}, -1.5f, 1.5f);
    const auto build = [](Graph& g, Var x) {
        Var y = g.exp(g.scale(x, 0.4f));
        y = g.mul(y, g.add_scalar(x, 2.5f));
        y = g.div(y, g.constant(Tensor::full({6}, 2.0f)));
        return g.mean(y);
    };
    Graph g;
    Var x = g.leaf(x0);
    g.backward(build(g, x));
    const Tensor analytic = g.grad(x);
    // Independent double-precision re-evaluation as the differencing oracle.
    const auto f = [](const std::vector<double>& probe) {
        double acc = 0.0;
        for (double v : probe) acc += std::exp(0.4 * v) * (v + 2.5) / 2.0;
        return acc / static_cast<double>(probe.size());
    };
    CHECK(check_gradient(f, x0, analytic).pass());
}

TEST_CASE("non-finite results are rejected") {
    Graph g;
    Var x = g.leaf(Tensor({1}, {1.0f}));
    CHECK_THROWS_AS(g.div(x, g.constant(Tensor({1}, {0.0f}))), NumericalError);
    CHECK_THROWS_AS(g.exp(g.constant(Tensor({1}, {200.0f}))), NumericalError);
}

TEST_CASE("ft1 round trip") {
    const auto dir = scratch_dir();
    const std::string path = (dir / "t.ft1").string();
    Rng rng(9);
    Tensor t = rng.uniform_tensor({2, 3, 4}, -5.0f, 5.0f);
    save_ft1(path, t);
    Tensor u = load_ft1(path);
    CHECK(u.shape() == t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(u[i] == t[i]);
}

TEST_CASE("ft1 corrupted magic") {
    const auto dir = scratch_dir();
    const std::string path = (dir / "bad.ft1").string();
    std::ofstream os(path, std::ios::binary);
    os << "NOPE1234567890";
    os.close();
    CHECK_THROWS_AS(load_ft1(path), InvalidInput);
    CHECK_THROWS_AS(load_ft1((dir / "absent.ft1").string()), InvalidInput);
}

TEST_CASE("png mask round trip within quantization") {
    const auto dir = scratch_dir();
    const std::string path = (dir / "m.png").string();
    Rng rng(13);
    Tensor mask = rng.uniform_tensor({9, 11}, 0.0f, 1.0f);
    save_png_gray(path, mask);
    Tensor back = load_png_gray(path);
    CHECK(back.shape() == mask.shape());
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        CHECK(std::abs(back[i] - mask[i]) <= 1.0f / 255.0f + 1e-6f);
    }
}
