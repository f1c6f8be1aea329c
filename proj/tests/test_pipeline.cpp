#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "wormgnn/labels.hpp"
#include "wormgnn/pipeline.hpp"
#include "wormgnn/random.hpp"
#include "wormgnn/recording.hpp"
#include "wormgnn/synth.hpp"

using namespace wormgnn;

namespace {

WormRecording small_recording(std::size_t n = 3, std::size_t t = 10) {
    WormRecording rec;
    rec.worm_id = "w";
    rec.dataset_tag = "test";
    for (std::size_t i = 0; i < n; ++i) rec.neuron_names.push_back("N" + std::to_string(i));
    rec.traces.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t));
    Rng rng(7);
    for (Eigen::Index i = 0; i < rec.traces.size(); ++i) rec.traces.data()[i] = rng.uniform(-2, 5);
    rec.derivatives = compute_derivatives(rec.traces);
    const StateLabel cycle[] = {StateLabel::Forward, StateLabel::Reverse1, StateLabel::DorsalTurn,
                                StateLabel::Unknown};
    for (std::size_t i = 0; i < t; ++i) rec.labels.push_back(cycle[i % 4]);
    return rec;
}

std::vector<double> row(const Eigen::MatrixXd& m, Eigen::Index r) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
    return v;
}

}  // namespace

// --- random

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, BelowStaysInRange) {
    Rng r(3);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) ++hits[r.below(7)];
    for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, NormalMoments) {
    Rng r(11);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, DerivedSeedsDiffer) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 10; ++a)
        for (std::uint64_t b = 0; b < 10; ++b) seen.insert(derive_seed(1, a, b));
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_EQ(derive_seed(5, 2, 3), derive_seed(5, 2, 3));
}

// --- labels

TEST(Labels, NamesRoundTrip) {
    for (int i = 0; i <= static_cast<int>(StateLabel::VentralTurn4); ++i) {
        const auto l = static_cast<StateLabel>(i);
        EXPECT_EQ(parse_label(label_name(l)), l);
    }
    EXPECT_THROW(parse_label("Sideways"), std::invalid_argument);
}

TEST(Labels, FineToCoarseMapping) {
    const std::map<StateLabel, StateLabel> want{
        {StateLabel::Forward, StateLabel::Forward4},        {StateLabel::ForwardSlowing, StateLabel::Forward4},
        {StateLabel::Reverse1, StateLabel::Reverse4},       {StateLabel::Reverse2, StateLabel::Reverse4},
        {StateLabel::SustainedReverse, StateLabel::Reverse4}, {StateLabel::DorsalTurn, StateLabel::DorsalTurn4},
        {StateLabel::VentralTurn, StateLabel::VentralTurn4}, {StateLabel::Unknown, StateLabel::Unknown},
    };
    for (auto [fine, coarse] : want) EXPECT_EQ(map_label(fine), coarse) << label_name(fine);
    EXPECT_THROW(map_label(StateLabel::Reverse4), std::invalid_argument);
}

TEST(Labels, MappingIsSurjectiveOntoCoarseAlphabet) {
    std::set<StateLabel> image;
    for (int i = 0; i <= static_cast<int>(StateLabel::Unknown); ++i) image.insert(map_label(static_cast<StateLabel>(i)));
    EXPECT_EQ(image, (std::set<StateLabel>{StateLabel::Forward4, StateLabel::Reverse4, StateLabel::DorsalTurn4,
                                           StateLabel::VentralTurn4, StateLabel::Unknown}));
}

TEST(Labels, TaskTargetsAndMasks) {
    const std::vector<StateLabel> ls{StateLabel::Forward,    StateLabel::SustainedReverse, StateLabel::VentralTurn,
                                     StateLabel::Unknown,    StateLabel::ForwardSlowing};
    EXPECT_EQ(class_targets(ls, LabelTask::Binary), (std::vector<int>{0, 1, kMasked, kMasked, 0}));
    EXPECT_EQ(class_targets(ls, LabelTask::Coarse4), (std::vector<int>{0, 1, 3, kMasked, 0}));
    EXPECT_EQ(class_targets(ls, LabelTask::Fine7), (std::vector<int>{0, 4, 6, kMasked, 1}));
    // coarse labels are usable by the binary and 4-state tasks but not the 7-state one
    EXPECT_EQ(class_index(StateLabel::Reverse4, LabelTask::Binary), 1);
    EXPECT_THROW(class_index(StateLabel::Reverse4, LabelTask::Fine7), std::invalid_argument);
    EXPECT_EQ(class_count(LabelTask::Fine7), 7);
    EXPECT_EQ(parse_label_task("coarse4"), LabelTask::Coarse4);
}

// --- recordings

TEST(Recording, SerializeRoundTripIsExact) {
    const auto rec = small_recording();
    const auto back = parse_recording(serialize_recording(rec));
    EXPECT_EQ(back.worm_id, rec.worm_id);
    EXPECT_EQ(back.neuron_names, rec.neuron_names);
    EXPECT_EQ(back.labels, rec.labels);
    EXPECT_TRUE(back.traces == rec.traces);
    EXPECT_TRUE(back.derivatives == rec.derivatives);
    EXPECT_EQ(back.n_neurons(), 3u);
    EXPECT_EQ(back.n_timesteps(), 10u);
}

TEST(Recording, MissingDerivativesAreComputed) {
    const std::string text = R"({"format":"wormgnn-recording","version":1,"worm_id":"a","dataset_tag":"t",
        "sample_period_s":0.5,"neuron_names":["X"],"traces":[[0,2,1]],"labels":["Forward","Reverse1","Unknown"]})";
    const auto rec = parse_recording(text);
    EXPECT_EQ(row(rec.derivatives, 0), (std::vector<double>{2, -1, -1}));
}

TEST(Recording, LabelLengthMismatchNamesBothLengths) {
    const std::string text = R"({"format":"wormgnn-recording","version":1,"worm_id":"a","dataset_tag":"t",
        "sample_period_s":0.5,"neuron_names":["X"],"traces":[[0,2,1]],"labels":["Forward"]})";
    try {
        parse_recording(text);
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("labels length 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("3"), std::string::npos) << msg;
    }
}

TEST(Recording, RejectsMalformedInput) {
    const std::string head = R"({"format":"wormgnn-recording","version":1,"worm_id":"a","dataset_tag":"t","sample_period_s":0.5,)";
    EXPECT_THROW(parse_recording("{not json"), DataError);
    EXPECT_THROW(parse_recording(head + R"("neuron_names":["X","X"],"traces":[[0,1],[1,0]],"labels":["Forward","Forward"]})"),
                 DataError);
    EXPECT_THROW(parse_recording(head + R"("neuron_names":["X"],"traces":[[0,1],[1,0]],"labels":["Forward","Forward"]})"),
                 DataError);
    EXPECT_THROW(parse_recording(head + R"("neuron_names":["X"],"traces":[[0,1]],"labels":["Forward","Walk"]})"),
                 DataError);
    EXPECT_THROW(parse_recording(head + R"("neuron_names":["X"],"traces":[[0,1]],"labels":["Forward","Reverse4"]})"),
                 DataError);
    EXPECT_THROW(parse_recording(head + R"("traces":[[0,1]],"labels":["Forward","Forward"]})"), DataError);
}

TEST(Recording, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "wormgnn_test_recording.json";
    const auto rec = small_recording(2, 6);
    save_recording(rec, path);
    EXPECT_TRUE(load_recording(path).traces == rec.traces);
    std::filesystem::remove(path);
    EXPECT_THROW(load_recording(path), DataError);
}

// --- preprocessing

TEST(Pipeline, DerivativeExamples) {
    EXPECT_EQ(compute_derivative(std::vector<double>{5, 5, 5}), (std::vector<double>{0, 0, 0}));
    EXPECT_EQ(compute_derivative(std::vector<double>{0, 1, 2, 3}), (std::vector<double>{1, 1, 1, 1}));
    EXPECT_EQ(compute_derivative(std::vector<double>{0, 2, 1}), (std::vector<double>{2, -1, -1}));
    EXPECT_THROW(compute_derivative(std::vector<double>{1}), DataError);
}

TEST(Pipeline, NormalizeRowExamples) {
    std::vector<double> a{2, 4, 6}, b{5, 5, 5}, c{0, 0.25, 1};
    normalize_row(a);
    normalize_row(b);
    normalize_row(c);
    EXPECT_EQ(a, (std::vector<double>{0, 0.5, 1}));
    EXPECT_EQ(b, (std::vector<double>{0, 0, 0}));
    EXPECT_EQ(c, (std::vector<double>{0, 0.25, 1}));
}

TEST(Pipeline, NormalizedRowsSpanUnitIntervalAndKeepExtremaPositions) {
    const auto raw = small_recording(4, 50);
    const auto norm = normalize_recording(raw);
    for (Eigen::Index r = 0; r < 4; ++r) {
        for (const auto* m : {&norm.traces, &norm.derivatives}) {
            EXPECT_DOUBLE_EQ(m->row(r).minCoeff(), 0.0);
            EXPECT_DOUBLE_EQ(m->row(r).maxCoeff(), 1.0);
        }
        Eigen::Index a, b, c, d;
        raw.traces.row(r).maxCoeff(&a);
        norm.traces.row(r).maxCoeff(&b);
        raw.traces.row(r).minCoeff(&c);
        norm.traces.row(r).minCoeff(&d);
        EXPECT_EQ(a, b);
        EXPECT_EQ(c, d);
    }
    const auto twice = normalize_recording(norm);
    EXPECT_LT((twice.traces - norm.traces).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Pipeline, SelectAndExcludeNeurons) {
    SynthConfig cfg;
    cfg.timesteps = 40;
    const auto rec = generate_worm(cfg);
    ASSERT_EQ(rec.neuron_names, shared_training_neurons());
    const auto sel = select_neurons(rec, shared_extended_neurons());
    EXPECT_EQ(sel.neuron_names, (std::vector<std::string>{"AIBR", "AVAL", "VB02"}));
    EXPECT_TRUE(sel.traces.row(1) == rec.traces.row(3));  // AVAL is the 4th shared neuron
    const std::vector<std::string> ava{"AVAL", "AVAR"};
    EXPECT_EQ(exclude_neurons(rec, ava).n_neurons(), 13u);
    EXPECT_TRUE(select_neurons(rec, rec.neuron_names).traces == rec.traces);
    const std::vector<std::string> missing{"AVAL", "XYZ"};
    try {
        select_neurons(rec, missing);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("XYZ"), std::string::npos);
    }
}

TEST(Pipeline, CommonNeuronsIsSortedIntersection) {
    auto a = small_recording(3);
    auto b = small_recording(3);
    b.neuron_names = {"N2", "Q", "N0"};
    const std::vector<WormRecording> recs{a, b};
    EXPECT_EQ(common_neurons(recs), (std::vector<std::string>{"N0", "N2"}));
}

TEST(Pipeline, WindowCountsAndRemainder) {
    auto rec = small_recording(2, 3200);
    EXPECT_EQ(windowize(rec, 8, 1).size(), 400u);
    auto short_rec = small_recording(2, 10);
    const auto w = windowize(short_rec, 8, 1);
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0].start_index, 0u);
    EXPECT_EQ(w[0].length, 8u);
    EXPECT_THROW(windowize(short_rec, 11, 1), std::invalid_argument);
    EXPECT_THROW(windowize(short_rec, 1, 1), std::invalid_argument);
}

TEST(Pipeline, WindowsTileThePrefixAndCarryFeatures) {
    const auto rec = small_recording(3, 83);
    const auto ws = windowize(rec, 8, 5);
    std::vector<int> covered(83, 0);
    for (const auto& w : ws) {
        EXPECT_LE(w.start_index + w.length, 83u);
        for (std::size_t t = 0; t < w.length; ++t) {
            ++covered[w.start_index + t];
            EXPECT_EQ(w.labels[t], rec.labels[w.start_index + t]);
            for (std::size_t n = 0; n < 3; ++n) {
                const auto ti = static_cast<Eigen::Index>(w.start_index + t);
                EXPECT_EQ(w.feature(t, n, 0), rec.traces(static_cast<Eigen::Index>(n), ti));
                EXPECT_EQ(w.feature(t, n, 1), rec.derivatives(static_cast<Eigen::Index>(n), ti));
            }
        }
    }
    for (std::size_t t = 0; t < 83; ++t) EXPECT_EQ(covered[t], t < 80 ? 1 : 0) << t;
}

TEST(Pipeline, WindowOrderIsSeededShuffle) {
    const auto rec = small_recording(2, 400);
    auto starts = [&](std::uint64_t seed) {
        std::vector<std::size_t> s;
        for (const auto& w : windowize(rec, 8, seed)) s.push_back(w.start_index);
        return s;
    };
    EXPECT_EQ(starts(3), starts(3));
    EXPECT_NE(starts(3), starts(4));
}

TEST(Pipeline, MajorityLabelTieGoesToLowestValue) {
    Window w;
    w.labels = {StateLabel::Reverse1, StateLabel::Forward, StateLabel::Reverse1, StateLabel::Forward};
    EXPECT_EQ(w.majority_label(), StateLabel::Forward);
}

TEST(Folds, EvenSplitAndPartition) {
    const auto rec = small_recording(2, 3200);
    const auto ws = windowize(rec, 8, 2);
    const auto f = assign_folds(ws, 10, 9);
    for (auto s : f.sizes()) EXPECT_EQ(s, 40u);
    std::vector<int> seen(ws.size(), 0);
    for (std::size_t k = 0; k < 10; ++k)
        for (auto i : f.members(k)) ++seen[i];
    for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Folds, UnevenSizesDifferByAtMostOne) {
    const auto rec = small_recording(2, 43 * 8);
    const auto f = assign_folds(windowize(rec, 8, 2), 10, 1);
    const auto sizes = f.sizes();
    EXPECT_EQ(*std::max_element(sizes.begin(), sizes.end()), 5u);
    EXPECT_EQ(*std::min_element(sizes.begin(), sizes.end()), 4u);
}

TEST(Folds, DeterministicAndRejectsTooManyFolds) {
    const auto ws = windowize(small_recording(2, 80), 8, 2);
    EXPECT_EQ(assign_folds(ws, 5, 3).fold_of, assign_folds(ws, 5, 3).fold_of);
    EXPECT_THROW(assign_folds(ws, 11, 3), std::invalid_argument);
    EXPECT_THROW(assign_folds(ws, 1, 3), std::invalid_argument);
}

TEST(Folds, StratifiedByMajorityLabel) {
    SynthConfig cfg;
    cfg.n_states = 4;
    const auto rec = generate_worm(cfg);
    const auto ws = windowize(rec, 8, 4);
    const auto f = assign_folds(ws, 10, 4);
    std::map<StateLabel, double> global;
    for (const auto& w : ws) global[w.majority_label()] += 1.0 / static_cast<double>(ws.size());
    for (std::size_t k = 0; k < 10; ++k) {
        const auto m = f.members(k);
        std::map<StateLabel, double> local;
        for (auto i : m) local[ws[i].majority_label()] += 1.0 / static_cast<double>(m.size());
        for (auto [label, p] : global) EXPECT_NEAR(local[label], p, 0.10) << "fold " << k;
    }
}

TEST(Permutations, FivePairsInOrder) {
    const std::vector<std::string> ids{"1", "2", "3", "4", "5"};
    const auto p = worm_permutations(ids, 2);
    const std::vector<std::vector<std::string>> want{{"1", "2"}, {"1", "3"}, {"1", "4"}, {"1", "5"}, {"2", "3"},
                                                     {"2", "4"}, {"2", "5"}, {"3", "4"}, {"3", "5"}, {"4", "5"}};
    EXPECT_EQ(p, want);
    EXPECT_EQ(worm_permutations(ids, 5).size(), 1u);
    EXPECT_EQ(worm_permutations(ids, 1).size(), 5u);
    EXPECT_THROW(worm_permutations(ids, 0), std::invalid_argument);
    EXPECT_THROW(worm_permutations(ids, 6), std::invalid_argument);
}

TEST(Permutations, CountIsBinomialWithoutDuplicates) {
    const std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g"};
    const std::size_t binom[] = {1, 7, 21, 35, 35, 21, 7, 1};
    for (std::size_t r = 1; r <= 7; ++r) {
        const auto p = worm_permutations(ids, r);
        EXPECT_EQ(p.size(), binom[r]);
        std::set<std::vector<std::string>> unique(p.begin(), p.end());
        EXPECT_EQ(unique.size(), p.size());
    }
}
