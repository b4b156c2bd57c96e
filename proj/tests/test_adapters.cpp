#include "fewseg/adapters.hpp"
#include "fewseg/common.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace fewseg;
using nn::Mat;

TEST_CASE("adaptformer forward formula") {
    AdapterWeights w;
    w.kind = AdapterKind::adaptformer;
    w.w_down.resize(1, 1);
    w.w_down(0, 0) = 3.0;
    w.w_up.resize(1, 1);
    w.w_up(0, 0) = 0.5;
    Mat x(1, 1);
    x(0, 0) = 2.0;
    // relu(2*3) * 0.5 = 3
    CHECK(adaptformer_forward(x, w)(0, 0) == doctest::Approx(3.0));

    // zero input -> zero delta
    x(0, 0) = 0.0;
    CHECK(adaptformer_forward(x, w)(0, 0) == 0.0);

    // zero up-projection -> zero delta
    w.w_up(0, 0) = 0.0;
    x(0, 0) = 7.0;
    CHECK(adaptformer_forward(x, w)(0, 0) == 0.0);
}

TEST_CASE("lora and serial adapter forwards match hand-multiplied matrices") {
    Rng rng(123);
    AdapterWeights w;
    w.w_down.resize(2, 1);
    w.w_up.resize(1, 2);
    for (int i = 0; i < 2; ++i) {
        w.w_down(i, 0) = rng.next_normal();
        w.w_up(0, i) = rng.next_normal();
    }
    Mat x(3, 2);
    for (long i = 0; i < 3; ++i)
        for (long j = 0; j < 2; ++j) x(i, j) = rng.next_normal();

    w.kind = AdapterKind::lora;
    Mat lora_expected = oracles::matmul_loops(oracles::matmul_loops(x, w.w_down), w.w_up);
    CHECK(oracles::max_abs_diff(lora_forward(x, w), lora_expected) < 1e-7);

    w.kind = AdapterKind::serial_adapter;
    Mat mid = oracles::matmul_loops(x, w.w_down);
    for (long i = 0; i < mid.rows(); ++i)
        for (long j = 0; j < mid.cols(); ++j) mid(i, j) = std::max(0.0, mid(i, j));
    Mat serial_expected = oracles::matmul_loops(mid, w.w_up);
    CHECK(oracles::max_abs_diff(serial_adapter_forward(x, w), serial_expected) < 1e-7);

    // zero cases
    w.kind = AdapterKind::lora;
    w.w_up.setZero();
    CHECK(lora_forward(x, w).cwiseAbs().maxCoeff() == 0.0);
    w.kind = AdapterKind::serial_adapter;
    Mat zero = Mat::Zero(3, 2);
    CHECK(serial_adapter_forward(zero, w).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adapter kind mismatch and shape errors") {
    AdapterWeights w;
    w.kind = AdapterKind::adaptformer;
    w.w_down = Mat::Zero(4, 2);
    w.w_up = Mat::Zero(2, 4);
    Mat x = Mat::Zero(1, 3); // wrong width
    CHECK_THROWS_AS(adaptformer_forward(x, w), ShapeError);
    Mat ok = Mat::Zero(1, 4);
    CHECK_THROWS_AS(lora_forward(ok, w), InputError);
}

TEST_CASE("init_adapters: bottleneck constraint, zero-up init, parameter count") {
    CHECK_THROWS_AS(init_adapters({2, 3}, 64, AdapterKind::adaptformer, 64, 0),
                    ConfigError);
    CHECK_THROWS_AS(init_adapters({2, 3}, 64, AdapterKind::adaptformer, 0, 0),
                    ConfigError);

    auto set = init_adapters({2, 3}, 64, AdapterKind::adaptformer, 32, 9);
    CHECK(set.entries.size() == 2);
    for (const auto& [li, w] : set.entries) {
        CHECK(w.w_up.cwiseAbs().maxCoeff() == 0.0);
        CHECK(w.w_down.cwiseAbs().maxCoeff() > 0.0);
        CHECK(w.w_down.rows() == 64);
        CHECK(w.w_down.cols() == 32);
    }
    // 2 layers x 2 * d * d~
    CHECK(set.parameter_count() == 2 * 2 * 64 * 32);

    auto again = init_adapters({2, 3}, 64, AdapterKind::adaptformer, 32, 9);
    CHECK(set.entries.at(2).w_down == again.entries.at(2).w_down);
}
