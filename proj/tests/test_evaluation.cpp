#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "wormgnn/evaluation.hpp"
#include "wormgnn/pipeline.hpp"
#include "wormgnn/synth.hpp"

using namespace wormgnn;

namespace {

// Cyclic Jacobi rotations; independent of the library's eigensolver.
std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd a) {
    const Eigen::Index n = a.rows();
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

WormRecording ramp_recording(double slope, std::size_t t, bool ramp_derivatives) {
    WormRecording rec;
    rec.worm_id = "ramp";
    rec.neuron_names = {"A", "B", "C"};
    rec.traces.resize(3, static_cast<Eigen::Index>(t));
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(t); ++s) rec.traces(i, s) = 0.1 * static_cast<double>(i) + slope * static_cast<double>(s);
    rec.derivatives = ramp_derivatives ? Eigen::MatrixXd(rec.traces.array() + 0.5) : compute_derivatives(rec.traces);
    rec.labels.assign(t, StateLabel::Unknown);
    return rec;
}

Model identity_model() {
    ModelConfig c;
    c.module_kind = ModuleKind::MLP;
    c.task = Task::Predict;
    c.n_neurons = 3;
    c.hidden_dim = 4;
    Model m(c, 1);
    for (auto& v : m.parameter("head.weight").mutable_values()) v = 0.0;
    for (auto& v : m.parameter("head.bias").mutable_values()) v = 0.0;
    return m;
}

}  // namespace

TEST(Accuracy, SkipsMaskedAndReportsUndefined) {
    const std::vector<int> p{0, 1, 1, 0}, t{0, 0, kMasked, 0};
    EXPECT_DOUBLE_EQ(*accuracy(p, t), 2.0 / 3.0);
    const std::vector<int> all_masked{kMasked, kMasked, kMasked, kMasked};
    EXPECT_FALSE(accuracy(p, all_masked).has_value());
    EXPECT_THROW(accuracy(p, std::vector<int>{0}), std::invalid_argument);
}

TEST(Confusion, RowsArePercentOfLabeledState) {
    const std::vector<int> p{0, 0, 1, 1, 1, 0}, t{0, 0, 0, 1, kMasked, 1};
    const auto cm = confusion_matrix(p, t, 3);
    EXPECT_NEAR(cm.percent(0, 0), 200.0 / 3.0, 1e-12);
    EXPECT_NEAR(cm.percent(0, 1), 100.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(cm.percent(1, 0), 50.0);
    EXPECT_TRUE(cm.empty_rows[2]);
    EXPECT_FALSE(cm.empty_rows[0]);
    EXPECT_EQ(cm.percent.row(2).sum(), 0.0);
    for (int r = 0; r < 2; ++r) EXPECT_NEAR(cm.percent.row(r).sum(), 100.0, 1e-12);
    EXPECT_THROW(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3), std::invalid_argument);
}

TEST(PerStepMse, IdentityModelOnRampMatchesClosedForm) {
    const double c = 0.01;
    for (bool both : {true, false}) {
        const auto rec = ramp_recording(c, 64, both);
        Model m = identity_model();
        const std::vector<WormRecording> recs{rec};
        const auto r = per_step_mse(m, recs, 16, 8);
        ASSERT_EQ(r.mse.size(), 16u);
        for (std::size_t s = 1; s <= 16; ++s) {
            // the identity model keeps X^t0, so step s is off by s*c in every ramped entry
            const double sc2 = (static_cast<double>(s) * c) * (static_cast<double>(s) * c);
            EXPECT_NEAR(r.mse[s - 1], both ? sc2 : sc2 / 2.0, 1e-9) << s;
        }
        // origins 0..40 fit a 16-step rollout inside 64 timesteps; 48 and 56 do not
        EXPECT_EQ(r.windows_used, 6u);
        EXPECT_EQ(r.windows_skipped, 2u);
        const auto summary = r.summary();
        ASSERT_EQ(summary.size(), 3u);
        EXPECT_EQ(summary[2].first, 16u);
    }
}

TEST(PerStepMse, NoUsableOriginGivesNan) {
    const auto rec = ramp_recording(0.1, 10, true);
    Model m = identity_model();
    const std::vector<RolloutOrigin> origins{{&rec, 0}};
    const auto r = per_step_mse(m, origins, 16);
    EXPECT_EQ(r.windows_used, 0u);
    EXPECT_TRUE(std::isnan(r.mse[0]));
}

TEST(Pca, ExplainedVarianceMatchesJacobiOracle) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Eigen::MatrixXd data = random_matrix(6, 50, seed);
        const auto pca = pca_project(data, 3);
        const Eigen::MatrixXd centered = data.colwise() - data.rowwise().mean();
        const auto ev = jacobi_eigenvalues(centered * centered.transpose() / 49.0);
        double total = 0.0;
        for (double v : ev) total += v;
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(pca.explained[c], ev[c] / total, 1e-10);
        EXPECT_GE(pca.explained[0], pca.explained[1]);
        EXPECT_GE(pca.explained[1], pca.explained[2]);
    }
}

TEST(Pca, ProjectionAndComponents) {
    const Eigen::MatrixXd data = random_matrix(5, 40, 9);
    const auto pca = pca_project(data, 3);
    EXPECT_EQ(pca.projection.rows(), 40);
    EXPECT_EQ(pca.projection.cols(), 3);
    EXPECT_LT((pca.components.transpose() * pca.components - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(),
              1e-12);
    for (Eigen::Index c = 0; c < 3; ++c) {
        Eigen::Index arg;
        pca.components.col(c).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(pca.components(arg, c), 0.0);
        EXPECT_NEAR(pca.projection.col(c).mean(), 0.0, 1e-12);
    }
}

TEST(Pca, SpectrumInvariantUnderOrthogonalMixing) {
    SynthConfig cfg;
    cfg.noise_std = 0.0;
    const auto cycle = latent_cycle(cfg);
    const auto a = pca_project(mixing_matrix(15, 3, 1) * cycle.latent);
    const auto b = pca_project(mixing_matrix(15, 3, 2) * cycle.latent);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a.explained[c], b.explained[c], 1e-9);
    EXPECT_GE(a.explained[0] + a.explained[1] + a.explained[2], 0.99);
}

TEST(Pca, RankDeficitAndPreconditions) {
    Eigen::MatrixXd data = Eigen::MatrixXd::Zero(4, 20);
    for (Eigen::Index t = 0; t < 20; ++t) data(0, t) = static_cast<double>(t);
    const auto pca = pca_project(data, 3);
    EXPECT_FALSE(pca.zero_variance[0]);
    EXPECT_TRUE(pca.zero_variance[1]);
    EXPECT_TRUE(pca.zero_variance[2]);
    EXPECT_NEAR(pca.explained[0], 1.0, 1e-12);
    EXPECT_THROW(pca_project(Eigen::MatrixXd::Zero(4, 3), 3), std::invalid_argument);
    EXPECT_THROW(pca_project(Eigen::MatrixXd::Zero(2, 30), 3), std::invalid_argument);
}

TEST(EdgeCorrelation, OffDiagonalPearson) {
    Eigen::MatrixXd a(3, 3), b(3, 3);
    a << 9, 1, 2, 3, 9, 4, 5, 6, 9;
    b = 2.0 * a;
    b.diagonal().setConstant(-7.0);
    EXPECT_NEAR(*edge_correlation(a, b), 1.0, 1e-12);
    EXPECT_NEAR(*edge_correlation(a, -b), -1.0, 1e-12);
    EXPECT_FALSE(edge_correlation(a, Eigen::MatrixXd::Ones(3, 3)).has_value());
    EXPECT_THROW(edge_correlation(a, Eigen::MatrixXd::Ones(2, 2)), std::invalid_argument);
}

TEST(Metrics, JsonLineRoundTrip) {
    RunMetrics m;
    m.run_id = "p1-f3";
    m.task = "classify2";
    m.permutation = 1;
    m.fold = 3;
    m.seed = 0xffffffffffffull;
    m.train_worms = {"a", "b"};
    m.accuracy_train = 0.1 + 0.2;  // not exactly representable in short decimal
    m.accuracy_test = 1.0 / 3.0;
    m.confusion = confusion_matrix(std::vector<int>{0, 1}, std::vector<int>{0, 0}, 2);
    m.per_step_mse = {1e-3, std::numeric_limits<double>::quiet_NaN()};
    m.best_val_loss = 0.123456789012345678;
    m.epochs_run = 7;
    const std::string line = to_json_line(m);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    const auto back = parse_metrics_line(line);
    EXPECT_EQ(back.run_id, m.run_id);
    EXPECT_EQ(back.seed, m.seed);
    EXPECT_EQ(back.train_worms, m.train_worms);
    EXPECT_EQ(*back.accuracy_train, *m.accuracy_train);
    EXPECT_FALSE(back.accuracy_val.has_value());
    EXPECT_EQ(back.best_val_loss, m.best_val_loss);
    ASSERT_TRUE(back.confusion.has_value());
    EXPECT_TRUE(back.confusion->percent == m.confusion->percent);
    EXPECT_EQ(back.confusion->empty_rows, m.confusion->empty_rows);
    EXPECT_TRUE(std::isnan(back.per_step_mse[1]));
    EXPECT_EQ(to_json_line(back), line);
    EXPECT_THROW(parse_metrics_line("{oops"), DataError);
    EXPECT_THROW(parse_metrics_line(R"({"fold":"x"})"), DataError);
}

TEST(Tables, TsvLayouts) {
    const std::vector<AccuracyBar> bars{{"gnn", {0.5, 1.0}}};
    EXPECT_EQ(accuracy_bars_tsv(bars), "label\tn\tmean\tstd\ngnn\t2\t0.75\t0.25\n");
    const auto cm = confusion_matrix(std::vector<int>{0, 1}, std::vector<int>{0, 0}, 2);
    const std::vector<std::string> names{"fwd", "rev"};
    EXPECT_EQ(confusion_tsv(cm, names), "labeled\tfwd\trev\tempty\nfwd\t50\t50\t0\nrev\t0\t0\t1\n");
    const std::vector<std::string> curves_names{"a", "b"};
    const std::vector<std::vector<double>> curves{{1, 2}, {3}};
    EXPECT_EQ(mse_curve_tsv(curves_names, curves), "step\ta\tb\n1\t1\t3\n2\t2\t\n");
    PcaResult pca;
    pca.projection = Eigen::MatrixXd::Zero(1, 2);
    const std::vector<StateLabel> labels{StateLabel::Forward};
    EXPECT_EQ(pca_trajectory_tsv(pca, labels), "t\tpc1\tpc2\tstate\n0\t0\t0\tForward\n");
}

TEST(Stats, MeanStdIsPopulation) {
    const auto [m, s] = mean_std(std::vector<double>{1, 3});
    EXPECT_DOUBLE_EQ(m, 2.0);
    EXPECT_DOUBLE_EQ(s, 1.0);
    EXPECT_TRUE(std::isnan(mean_std(std::vector<double>{}).first));
}
