#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "patentscape/pipeline.hpp"
#include "support/smoke.hpp"
#include "support/synthetic.hpp"
#include "support/tiny_model.hpp"

using namespace patentscape;
using namespace patentscape::pipeline;
using patentscape::testsupport::SyntheticSpec;

namespace {

corpus::DatasetSplit tiny_dataset(const testsupport::TinyFixture&) {
    corpus::DatasetSplit ds;
    corpus::PatentRecord pos1, pos2, neg1, neg2, val_pos, val_neg;
    pos1.id = "tr1"; pos1.abstract = "alpha beta gamma"; pos1.cpc = {"c1"}; pos1.valid = true;
    pos2.id = "tr2"; pos2.abstract = "alpha epsilon zeta"; pos2.cpc = {"c2"}; pos2.valid = true;
    neg1.id = "tr3"; neg1.abstract = "delta epsilon"; neg1.cpc = {"c3"};
    neg2.id = "tr4"; neg2.abstract = "zeta beta"; neg2.ipc = {"i1"};
    val_pos.id = "va1"; val_pos.abstract = "alpha beta"; val_pos.cpc = {"c1"}; val_pos.valid = true;
    val_neg.id = "va2"; val_neg.abstract = "delta zeta"; val_neg.cpc = {"c3"};
    ds.train = {pos1, neg1, pos2, neg2};
    ds.validation = {val_pos, val_neg};
    ds.test = {val_pos, val_neg};
    ds.train_positives = 2;
    ds.validation_positives = 1;
    ds.test_positives = 1;
    return ds;
}

}  // namespace

TEST_CASE("zero epochs leave the bundle unchanged with empty history") {
    auto fx = testsupport::make_tiny_fixture({});
    auto before = fx.bundle.params.value("head.hidden.weight").data;
    nn::TrainConfig cfg;
    cfg.epochs = 0;
    auto history = train(tiny_dataset(fx), fx.bundle, cfg);
    CHECK(history.empty());
    CHECK(fx.bundle.params.value("head.hidden.weight").data == before);
    CHECK(fx.bundle.params.step() == 0);
}

TEST_CASE("training requires both classes") {
    auto fx = testsupport::make_tiny_fixture({});
    auto ds = tiny_dataset(fx);
    for (auto& r : ds.train) r.valid = true;
    nn::TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train(ds, fx.bundle, cfg), DataError);
    ds.train.clear();
    CHECK_THROWS_AS(train(ds, fx.bundle, cfg), DataError);
}

TEST_CASE("training is bit-deterministic for a fixed seed") {
    nn::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = 5;

    auto fx1 = testsupport::make_tiny_fixture({});
    auto h1 = train(tiny_dataset(fx1), fx1.bundle, cfg);
    auto fx2 = testsupport::make_tiny_fixture({});
    auto h2 = train(tiny_dataset(fx2), fx2.bundle, cfg);
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
        CHECK(h1[i].train_loss == h2[i].train_loss);
        CHECK(h1[i].validation_ap == h2[i].validation_ap);
    }
    CHECK(fx1.bundle.params.value("head.hidden.weight").data ==
          fx2.bundle.params.value("head.hidden.weight").data);
}

TEST_CASE("training history records losses and validation AP per epoch") {
    auto fx = testsupport::make_tiny_fixture({});
    nn::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    auto history = train(tiny_dataset(fx), fx.bundle, cfg);
    REQUIRE(history.size() == 3);
    for (const auto& e : history) {
        CHECK(std::isfinite(e.train_loss));
        CHECK(e.validation_ap >= 0.0);
        CHECK(e.validation_ap <= 1.0);
    }
    auto path = (std::filesystem::temp_directory_path() / "ps_history.csv").string();
    write_history(path, history);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,train_loss,validation_ap");
}

TEST_CASE("a codes-only model learns a planted CPC signal") {
    SyntheticSpec spec;
    spec.corpus_size = 600;
    spec.positives = 30;
    spec.text_distractor_rate = 0.0;
    spec.code_distractor_rate = 0.0;
    spec.seed = 13;
    auto records = testsupport::generate_synthetic_corpus(spec);

    testsupport::SmokeConfig cfg;
    cfg.negatives = {200, 60, 60};
    // anchors can reach at most emergence N/P = 20 on this small corpus
    cfg.emergence_ratio_threshold = 15.0;
    cfg.code_dim = 32;
    cfg.token_dim = 32;
    cfg.hidden = 16;
    cfg.feed_forward = 32;
    cfg.train_epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 13;
    auto artifacts = testsupport::build_smoke_artifacts(records, cfg);
    // without distractors the marker CPC itself is (correctly) important
    CHECK_FALSE(artifacts.important.empty());
    CHECK(artifacts.dataset.train.size() == 200 + artifacts.dataset.train_positives);

    auto outcome = testsupport::train_smoke_model(artifacts, cfg, nn::FeatureMode::codes_only);
    INFO("test AP: " << outcome.test_report.average_precision);
    CHECK(outcome.test_report.average_precision >= 0.9);
}

TEST_CASE("checkpoints round trip and reproduce evaluations bit for bit") {
    auto fx = testsupport::make_tiny_fixture({});
    nn::TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    auto ds = tiny_dataset(fx);
    train(ds, fx.bundle, cfg);

    auto report_before = evaluate(fx.bundle, ds.test);
    auto path = (std::filesystem::temp_directory_path() / "ps_ckpt.bin").string();
    save_checkpoint(path, fx.bundle);
    auto loaded = load_checkpoint(path);
    auto report_after = evaluate(loaded, ds.test);

    CHECK(report_before.average_precision == report_after.average_precision);
    CHECK(report_before.f1 == report_after.f1);
    REQUIRE(report_before.records.size() == report_after.records.size());
    for (std::size_t i = 0; i < report_before.records.size(); ++i)
        CHECK(report_before.records[i].score == report_after.records[i].score);

    // saving the loaded bundle again produces identical bytes
    auto path2 = (std::filesystem::temp_directory_path() / "ps_ckpt2.bin").string();
    save_checkpoint(path2, loaded);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);
}

TEST_CASE("the [PAD] embedding row stays zero through fine-tuning") {
    auto fx = testsupport::make_tiny_fixture({});
    nn::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-2;
    train(tiny_dataset(fx), fx.bundle, cfg);
    const nn::Tensor& tok = fx.bundle.params.value("token_embedding");
    for (std::size_t j = 0; j < tok.cols; ++j)
        CHECK(tok.at(textenc::Vocabulary::kPad, j) == 0.0);
}

TEST_CASE("forward_patent is stable across repeated calls") {
    auto fx = testsupport::make_tiny_fixture({});
    corpus::PatentRecord r;
    r.id = "x";
    r.abstract = "alpha beta gamma";
    r.cpc = {"c1", "c3"};
    r.ipc = {"i2"};
    const double p1 = forward_patent(r, fx.bundle);
    const double p2 = forward_patent(r, fx.bundle);
    CHECK(p1 == p2);
    CHECK(p1 > 0.0);
    CHECK(p1 < 1.0);
}

TEST_CASE("evaluate rejects empty input and requires a positive") {
    auto fx = testsupport::make_tiny_fixture({});
    CHECK_THROWS_AS(evaluate(fx.bundle, {}), DataError);
    corpus::PatentRecord neg;
    neg.id = "n";
    neg.abstract = "alpha";
    CHECK_THROWS_AS(evaluate(fx.bundle, {neg}), DataError);
}

TEST_CASE("evaluation parallelism does not change scores") {
    auto fx = testsupport::make_tiny_fixture({});
    std::vector<corpus::PatentRecord> records;
    for (int i = 0; i < 7; ++i) {
        corpus::PatentRecord r;
        r.id = "r" + std::to_string(i);
        r.abstract = i % 2 ? "alpha beta" : "gamma delta epsilon";
        r.cpc = {i % 3 ? "c1" : "c2"};
        r.valid = i == 0;
        records.push_back(r);
    }
    auto seq = evaluate(fx.bundle, records, 1);
    auto par = evaluate(fx.bundle, records, 2);
    REQUIRE(seq.records.size() == par.records.size());
    for (std::size_t i = 0; i < seq.records.size(); ++i)
        CHECK(seq.records[i].score == par.records[i].score);
}
