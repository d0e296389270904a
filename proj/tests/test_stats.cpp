#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "bln/stats.hpp"

using namespace bln;

namespace {

std::pair<Dataset, Dataset> small_spirals(std::uint64_t seed, std::size_t per_class = 300) {
    SpiralParams p;
    p.n_train_per_class = per_class;
    p.n_val_per_class = 50;
    return generate_spirals(seed, p);
}

std::size_t first_norm_layer(const Model& m) {
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        if (m.layers[i].kind == LayerKind::norm) return i;
    FAIL("model has no norm layer");
    return 0;
}

// Per-feature moments of a captured [N,C] activation, computed independently.
std::pair<std::vector<double>, std::vector<double>> moments(const std::vector<double>& v,
                                                            std::size_t n, std::size_t c) {
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) mean[j] += v[i * c + j];
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double d = v[i * c + j] - mean[j];
            var[j] += d * d;
        }
    for (double& x : var) x /= static_cast<double>(n);
    return {mean, var};
}

std::vector<double> capture_layer_input(Model& m, const Dataset& d, std::size_t layer) {
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    fo.capture_inputs = {layer};
    fo.capture_only = true;
    ForwardResult fw = forward(m, d.inputs, d.size(), fo);
    return fw.captured[0];
}

}  // namespace

TEST_CASE("finalized population stats equal the dataset stats of the layer input") {
    auto [train, val] = small_spirals(41);
    Model m = build_spiral_mlp(NormKind::bn, 6);
    const std::size_t li = first_norm_layer(m);
    std::vector<double> a_in = capture_layer_input(m, train, li);
    auto [mean, var] = moments(a_in, train.size(), m.layers[li].units);

    finalize_population_stats(m, train, 128);
    const BatchNormState& st = m.bn_states[m.bn_index[li]];
    REQUIRE(st.finalized);
    for (std::size_t j = 0; j < mean.size(); ++j) {
        CHECK(st.population_mu[j] == doctest::Approx(mean[j]).epsilon(1e-9));
        CHECK(st.population_var[j] == doctest::Approx(var[j]).epsilon(1e-9));
    }
}

TEST_CASE("stacked BN layers finalize sequentially (second sees the first in eval mode)") {
    auto [train, val] = small_spirals(42);
    Model m = build_spiral_mlp(NormKind::bn, 8);
    std::vector<std::size_t> norm_layers;
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        if (m.layers[i].kind == LayerKind::norm) norm_layers.push_back(i);
    REQUIRE(norm_layers.size() >= 2);

    finalize_population_stats(m, train, 128);

    // Independent oracle: with all layers finalized, recapture the second norm
    // layer's input; its stats must match what finalize stored for it.
    const std::size_t li = norm_layers[1];
    std::vector<double> a_in = capture_layer_input(m, train, li);
    auto [mean, var] = moments(a_in, train.size(), m.layers[li].units);
    const BatchNormState& st = m.bn_states[m.bn_index[li]];
    for (std::size_t j = 0; j < mean.size(); ++j) {
        CHECK(st.population_mu[j] == doctest::Approx(mean[j]).epsilon(1e-9));
        CHECK(st.population_var[j] == doctest::Approx(var[j]).epsilon(1e-9));
    }
}

TEST_CASE("init_from_sample on raw inputs recovers the sample moments exactly") {
    // The CIFAR net opens with a per-channel batchless layer on the raw
    // image, so the fitted mu/sigma must equal the per-channel sample stats.
    std::mt19937_64 rng(43);
    const std::size_t n = 20, px = 32 * 32;
    std::vector<double> inputs(n * 3 * px);
    const double want_mu[3] = {0.3, 0.5, 0.7};
    const double want_sd[3] = {0.05, 0.1, 0.2};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            std::normal_distribution<double> d(want_mu[c], want_sd[c]);
            for (std::size_t s = 0; s < px; ++s) inputs[(i * 3 + c) * px + s] = d(rng);
        }
    // Exact per-channel moments of the drawn sample:
    double mean[3] = {0, 0, 0}, var[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t s = 0; s < px; ++s) mean[c] += inputs[(i * 3 + c) * px + s];
    for (double& m : mean) m /= n * px;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t s = 0; s < px; ++s) {
                const double d = inputs[(i * 3 + c) * px + s] - mean[c];
                var[c] += d * d;
            }
    for (double& v : var) v /= n * px;

    Model m = build_cifar_cnn(NormKind::binlog, 9);
    init_from_sample(m, inputs, n, 8);
    const std::size_t li = first_norm_layer(m);
    const auto& lp = m.layer_params[li];
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(m.params[lp[0]].value[c] == doctest::Approx(mean[c]).epsilon(1e-9));
        const double sigma = sigma_from_param(m.params[lp[1]].value, SigmaMode::log)[c];
        CHECK(sigma == doctest::Approx(std::sqrt(var[c])).epsilon(1e-9));
    }
}

TEST_CASE("init_from_sample is idempotent and leaves a small gauge residual") {
    auto [train, val] = small_spirals(44);
    Model m = build_spiral_mlp(NormKind::binlog, 10);
    init_from_sample(m, train.inputs, train.size(), 128);

    std::vector<std::vector<double>> first;
    for (std::size_t li = 0; li < m.layers.size(); ++li)
        if (m.layers[li].kind == LayerKind::norm) {
            first.push_back(m.params[m.layer_params[li][0]].value);
            first.push_back(m.params[m.layer_params[li][1]].value);
        }

    init_from_sample(m, train.inputs, train.size(), 128);
    std::size_t at = 0;
    for (std::size_t li = 0; li < m.layers.size(); ++li)
        if (m.layers[li].kind == LayerKind::norm)
            for (int j = 0; j < 2; ++j) {
                const auto& now = m.params[m.layer_params[li][j]].value;
                const auto& was = first[at++];
                for (std::size_t u = 0; u < now.size(); ++u)
                    CHECK(std::abs(now[u] - was[u]) <= 1e-9);
            }

    // Gauged metric on the fitted sample is small right after initialization.
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    ForwardResult fw = forward(m, train.inputs, train.size(), fo);
    REQUIRE(!fw.gauge_metric.empty());
    CHECK(fw.gauge_metric[0] < 0.05);
}

TEST_CASE("init_from_sample throws on degenerate units") {
    Model m = build_cifar_cnn(NormKind::binlog, 2);
    std::vector<double> constant(4 * 3 * 32 * 32, 0.5);  // zero variance everywhere
    CHECK_THROWS_AS(init_from_sample(m, constant, 4, 4), DegenerateError);
}

TEST_CASE("migration from a plain model is an eval-mode identity (criterion oracle)") {
    auto [train, val] = small_spirals(45);
    Model src = build_spiral_mlp(NormKind::none, 12);
    for (NormKind target : {NormKind::bin, NormKind::binlog, NormKind::bininv}) {
        Model dst = migrate_from_plain(src, target, train.inputs, train.size(), 128);
        CHECK(dst.norm_kind == target);
        // 100 random probe points from the validation split.
        const double diff = max_output_difference(src, dst, val.inputs, 100);
        CHECK(diff <= 1e-9);
    }
}

TEST_CASE("plain migration seeds beta=mu and gamma=sigma with a small gauge residual") {
    auto [train, val] = small_spirals(46);
    Model src = build_spiral_mlp(NormKind::none, 14);
    Model dst = migrate_from_plain(src, NormKind::bin, train.inputs, train.size(), 128);
    for (std::size_t li = 0; li < dst.layers.size(); ++li) {
        if (dst.layers[li].kind != LayerKind::norm) continue;
        const auto& lp = dst.layer_params[li];
        const std::vector<double> sigma =
            sigma_from_param(dst.params[lp[1]].value, SigmaMode::direct);
        CHECK(dst.params[lp[3]].value == dst.params[lp[0]].value);  // beta = mu
        for (std::size_t u = 0; u < sigma.size(); ++u)
            CHECK(dst.params[lp[2]].value[u] == doctest::Approx(sigma[u]).epsilon(1e-12));
    }
    ForwardOptions fo;
    fo.phase = Phase::eval;
    fo.update_moving = false;
    ForwardResult fw = forward(dst, train.inputs, train.size(), fo);
    for (double g : fw.gauge_metric) CHECK(g < 0.05);
}

TEST_CASE("migration from a finalized BN model changes outputs by at most 1e-6") {
    auto [train, val] = small_spirals(47);
    Model src = build_spiral_mlp(NormKind::bn, 16);
    // Give the BN layers non-trivial gamma/beta so the test is not vacuous.
    std::mt19937_64 rng(48);
    std::uniform_real_distribution<double> d(0.5, 1.5);
    for (Param& p : src.params)
        if (p.is_norm)
            for (double& v : p.value) v = d(rng);
    finalize_population_stats(src, train, 128);
    for (NormKind target : {NormKind::bin, NormKind::binlog, NormKind::bininv}) {
        Model dst = migrate_from_batchnorm(src, target);
        const double diff = max_output_difference(src, dst, val.inputs, 100);
        CHECK(diff <= 1e-6);
    }
}

TEST_CASE("migration argument validation") {
    auto [train, val] = small_spirals(49, 50);
    Model plain = build_spiral_mlp(NormKind::none, 1);
    Model bn = build_spiral_mlp(NormKind::bn, 1);
    CHECK_THROWS_AS((void)migrate_from_batchnorm(plain, NormKind::binlog), ConfigError);
    CHECK_THROWS_AS((void)migrate_from_batchnorm(bn, NormKind::bn), ConfigError);
    CHECK_THROWS_AS((void)migrate_from_plain(bn, NormKind::binlog, train.inputs,
                                             train.size(), 64),
                    ConfigError);
    CHECK_THROWS_AS((void)migrate_from_plain(plain, NormKind::none, train.inputs,
                                             train.size(), 64),
                    ConfigError);
}
