#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mixoe/errors.hpp"
#include "mixoe/toydata.hpp"
#include "mixoe/trainer.hpp"

using namespace mixoe;

namespace {

struct Env {
    Dataset dataset;
    EnvironmentSpec spec;
    DataPartition partition;
    LabelMap labels;
    MlpSpec model_spec;
    OutlierPool outlier_train;
    OutlierPool outlier_validation;
};

Env make_env() {
    Env env;
    ToyConfig cfg;
    cfg.image_hw = 8;
    cfg.train_per_class = 6;
    cfg.test_per_class = 3;
    cfg.noise = 0.1;
    env.dataset = make_blobs(4, cfg);
    env.spec.dataset_name = "blobs";
    env.spec.split_index = 1;
    env.spec.id_classes = env.dataset.classes;
    env.partition = partition_id_data(env.dataset, env.spec, 0.2, 7);
    env.labels = make_label_map(env.spec.id_classes);
    env.model_spec = MlpSpec{64, {16}, 6};

    const OutlierPool raw = make_texture_pool(4, 12, cfg);
    const OutlierPool filtered = filter_outlier_pool(raw, {"spots"});
    auto both = split_outlier_validation(filtered, 0.2, 4);
    env.outlier_train = std::move(both.first);
    env.outlier_validation = std::move(both.second);
    return env;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

} // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0.1, 0, 30) == 0.1);
    CHECK(std::abs(cosine_lr(0.1, 29, 30)) <= 1e-12 * 0.1);
    CHECK(cosine_lr(0.1, 5, 11) == Catch::Approx(0.05).epsilon(1e-12));
    CHECK(cosine_lr(0.1, 0, 1) == 0.1);
    for (int e = 1; e < 30; ++e) CHECK(cosine_lr(0.1, e, 30) < cosine_lr(0.1, e - 1, 30));
    CHECK_THROWS_AS(cosine_lr(0.1, -1, 10), std::invalid_argument);
    CHECK_THROWS_AS(cosine_lr(0.1, 10, 10), std::invalid_argument);
}

TEST_CASE("outlier batch-size conventions") {
    CHECK(conventional_outlier_batch(ObjectiveKind::oe, 32) == 64);
    CHECK(conventional_outlier_batch(ObjectiveKind::oe_hard_mining, 32) == 64);
    CHECK(conventional_outlier_batch(ObjectiveKind::energy_oe, 32) == 64);
    CHECK(conventional_outlier_batch(ObjectiveKind::mixoe, 32) == 32);
    CHECK(conventional_outlier_batch(ObjectiveKind::mix_plus_oe, 32) == 32);
    CHECK(conventional_outlier_batch(ObjectiveKind::standard, 32) == 0);
    CHECK(conventional_outlier_batch(ObjectiveKind::mix, 32) == 0);
}

TEST_CASE("validate_train_config") {
    TrainConfig ok = make_standard_config(1, 5);
    CHECK_NOTHROW(validate_train_config(ok));

    SECTION("standard phase cannot carry a regularized objective") {
        TrainConfig c = ok;
        c.objective.kind = ObjectiveKind::oe;
        c.outlier_batch_size = 64;
        CHECK_THROWS_AS(validate_train_config(c), std::invalid_argument);
    }
    SECTION("outlier batch must follow the convention") {
        ObjectiveConfig oe;
        oe.kind = ObjectiveKind::oe;
        oe.beta = 1.0;
        TrainConfig c = make_finetune_config(oe, 1, 5, 32);
        CHECK_NOTHROW(validate_train_config(c));
        c.outlier_batch_size = 32;
        CHECK_THROWS_AS(validate_train_config(c), std::invalid_argument);

        ObjectiveConfig moe;
        moe.kind = ObjectiveKind::mixoe;
        moe.beta = 5.0;
        TrainConfig m = make_finetune_config(moe, 1, 5, 32);
        CHECK(m.outlier_batch_size == 32);
        m.outlier_batch_size = 64;
        CHECK_THROWS_AS(validate_train_config(m), std::invalid_argument);
    }
    SECTION("basic field validation") {
        TrainConfig c = ok;
        c.epochs = 0;
        CHECK_THROWS_AS(validate_train_config(c), std::invalid_argument);
        c = ok;
        c.schedule = "step";
        CHECK_THROWS_AS(validate_train_config(c), std::invalid_argument);
        c = ok;
        c.optimizer.type = "adam";
        CHECK_THROWS_AS(validate_train_config(c), std::invalid_argument);
        c = ok;
        c.optimizer.lr = 0.0;
        CHECK_THROWS_AS(validate_train_config(c), std::invalid_argument);
        c = ok;
        c.id_batch_size = 0;
        CHECK_THROWS_AS(validate_train_config(c), std::invalid_argument);
    }
}

TEST_CASE("training is deterministic in the seed") {
    const Env env = make_env();
    TrainConfig cfg = make_standard_config(11, 3);
    cfg.optimizer.lr = 0.05;
    cfg.id_batch_size = 10;

    MlpModel a(env.model_spec, 11);
    const TrainResult ra = train_standard(a, env.partition, env.labels, cfg);
    MlpModel b(env.model_spec, 11);
    const TrainResult rb = train_standard(b, env.partition, env.labels, cfg);
    CHECK(a.parameters() == b.parameters());
    REQUIRE(ra.epochs.size() == rb.epochs.size());
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) {
        CHECK(ra.epochs[e].loss_total == rb.epochs[e].loss_total);
        CHECK(ra.epochs[e].val_accuracy == rb.epochs[e].val_accuracy);
        CHECK(ra.epochs[e].lr == cosine_lr(cfg.optimizer.lr, static_cast<int>(e), cfg.epochs));
    }

    TrainConfig other = cfg;
    other.seed = 12;
    MlpModel c(env.model_spec, 11);
    train_standard(c, env.partition, env.labels, other);
    CHECK(a.parameters() != c.parameters());
}

TEST_CASE("finetuning with beta=0 OE matches continued standard training exactly") {
    const Env env = make_env();

    TrainConfig pre_cfg = make_standard_config(21, 2);
    pre_cfg.optimizer.lr = 0.05;
    pre_cfg.id_batch_size = 10;
    MlpModel base(env.model_spec, 21);
    train_standard(base, env.partition, env.labels, pre_cfg);
    const std::vector<double> warm = base.parameters();

    ObjectiveConfig oe0;
    oe0.kind = ObjectiveKind::oe;
    oe0.beta = 0.0;
    TrainConfig ft_oe = make_finetune_config(oe0, 33, 3, 10);
    ft_oe.optimizer.lr = 0.02;
    MlpModel m_oe(env.model_spec, 0);
    m_oe.set_parameters(warm);
    const TrainResult r_oe = finetune(m_oe, env.partition, env.labels, env.outlier_train, ft_oe);

    TrainConfig ft_std = make_finetune_config(ObjectiveConfig{}, 33, 3, 10);
    ft_std.optimizer.lr = 0.02;
    MlpModel m_std(env.model_spec, 0);
    m_std.set_parameters(warm);
    const TrainResult r_std =
        finetune(m_std, env.partition, env.labels, env.outlier_train, ft_std);

    CHECK(m_oe.parameters() == m_std.parameters());
    REQUIRE(r_oe.epochs.size() == r_std.epochs.size());
    for (std::size_t e = 0; e < r_oe.epochs.size(); ++e) {
        CHECK(r_oe.epochs[e].loss_total ==
              Catch::Approx(r_std.epochs[e].loss_total).margin(1e-12));
        CHECK(r_oe.epochs[e].id_term ==
              Catch::Approx(r_std.epochs[e].id_term).margin(1e-12));
        CHECK(r_oe.epochs[e].val_accuracy == r_std.epochs[e].val_accuracy);
    }
    // the OE run reads outliers even though beta = 0; the standard run reads none
    CHECK(r_oe.outlier_reads > 0);
    CHECK(r_std.outlier_reads == 0);
}

TEST_CASE("outlier consumption bookkeeping") {
    const Env env = make_env();
    const std::size_t pool_size = env.outlier_train.examples.size();
    REQUIRE(pool_size == 68); // 7 concepts x 12, minus 20% validation carve

    ObjectiveConfig oe;
    oe.kind = ObjectiveKind::oe;
    oe.beta = 1.0;
    TrainConfig cfg = make_finetune_config(oe, 5, 2, 10); // outlier batch 20
    MlpModel model(env.model_spec, 5);
    const TrainResult r = finetune(model, env.partition, env.labels, env.outlier_train, cfg);
    // 30 train / batch 10 -> 3 steps per epoch; each epoch reshuffles, so the
    // two 60-read passes cover between 60 and all 68 pool entries
    CHECK(r.outlier_reads == 2 * 3 * 20);
    CHECK(r.distinct_outliers_consumed >= 60);
    CHECK(r.distinct_outliers_consumed <= pool_size);

    ObjectiveConfig mining;
    mining.kind = ObjectiveKind::oe_hard_mining;
    mining.beta = 1.0;
    mining.mining_pool_factor = 4;
    TrainConfig mcfg = make_finetune_config(mining, 5, 2, 10);
    MlpModel miner(env.model_spec, 5);
    const TrainResult rm =
        finetune(miner, env.partition, env.labels, env.outlier_train, mcfg);
    CHECK(rm.outlier_reads == 2 * 3 * 20 * 4);
    CHECK(rm.distinct_outliers_consumed == pool_size);
}

TEST_CASE("absurd learning rate raises DivergenceError") {
    const Env env = make_env();
    TrainConfig cfg = make_standard_config(3, 10);
    cfg.optimizer.lr = 1e30;
    cfg.id_batch_size = 10;
    MlpModel model(env.model_spec, 3);
    CHECK_THROWS_AS(train_standard(model, env.partition, env.labels, cfg), DivergenceError);
}

TEST_CASE("run_training argument validation") {
    const Env env = make_env();
    MlpModel model(env.model_spec, 1);

    SECTION("objective requiring outliers needs a pool") {
        ObjectiveConfig oe;
        oe.kind = ObjectiveKind::oe;
        oe.beta = 1.0;
        const TrainConfig cfg = make_finetune_config(oe, 1, 2, 10);
        CHECK_THROWS_AS(run_training(model, env.partition, env.labels, nullptr, cfg),
                        std::invalid_argument);
        OutlierPool tiny;
        tiny.examples.assign(env.outlier_train.examples.begin(),
                             env.outlier_train.examples.begin() + 5);
        CHECK_THROWS_AS(run_training(model, env.partition, env.labels, &tiny, cfg),
                        std::invalid_argument);
    }
    SECTION("phase guards") {
        const TrainConfig std_cfg = make_standard_config(1, 2);
        TrainConfig wrong = std_cfg;
        wrong.phase = TrainPhase::finetune;
        CHECK_THROWS_AS(train_standard(model, env.partition, env.labels, wrong),
                        std::invalid_argument);
        CHECK_THROWS_AS(
            finetune(model, env.partition, env.labels, env.outlier_train, std_cfg),
            std::invalid_argument);
    }
    SECTION("empty train set") {
        DataPartition empty;
        empty.validation = env.partition.validation;
        CHECK_THROWS_AS(
            run_training(model, empty, env.labels, nullptr, make_standard_config(1, 1)),
            std::invalid_argument);
    }
}

TEST_CASE("mix finetuning runs without any outlier pool") {
    const Env env = make_env();
    ObjectiveConfig mix;
    mix.kind = ObjectiveKind::mix;
    mix.beta = 1.0;
    TrainConfig cfg = make_finetune_config(mix, 2, 2, 10);
    CHECK(cfg.outlier_batch_size == 0);
    MlpModel model(env.model_spec, 2);
    OutlierPool unused;
    const TrainResult r = finetune(model, env.partition, env.labels, unused, cfg);
    CHECK(r.outlier_reads == 0);
    CHECK(r.epochs.back().reg_term > 0.0);
}

TEST_CASE("checkpoint round-trip and rejection") {
    const auto path = temp_file("mixoe_test_ckpt.bin");
    Checkpoint ckpt;
    ckpt.config_hash = 0xfeedbeefcafe1234ULL;
    ckpt.spec = MlpSpec{64, {16, 8}, 6};
    MlpModel model(ckpt.spec, 9);
    ckpt.params = model.parameters();

    SECTION("round-trip preserves everything") {
        save_checkpoint(ckpt, path.string());
        const Checkpoint back = read_checkpoint(path.string());
        CHECK(back.config_hash == ckpt.config_hash);
        CHECK(back.spec == ckpt.spec);
        CHECK(back.params == ckpt.params);
        CHECK(parameter_hash(back.params) == parameter_hash(ckpt.params));
    }
    SECTION("strict load enforces the config hash") {
        save_checkpoint(ckpt, path.string());
        CHECK_NOTHROW(load_checkpoint(path.string(), ckpt.config_hash));
        CHECK_THROWS_AS(load_checkpoint(path.string(), ckpt.config_hash + 1), DataError);
    }
    SECTION("corrupt magic rejected") {
        std::ofstream out(path, std::ios::binary);
        out << "JUNKJUNKJUNKJUNKJUNKJUNK";
        out.close();
        CHECK_THROWS_AS(read_checkpoint(path.string()), DataError);
    }
    SECTION("truncated file rejected") {
        save_checkpoint(ckpt, path.string());
        std::filesystem::resize_file(path, 40);
        CHECK_THROWS_AS(read_checkpoint(path.string()), DataError);
    }
    SECTION("missing file is an IO error") {
        CHECK_THROWS_AS(read_checkpoint(temp_file("no_such_ckpt.bin").string()), IoError);
    }
    std::filesystem::remove(path);
}

namespace {

struct TuneFixture {
    Env env;
    std::vector<double> warm;
    ModelFactory factory;

    TuneFixture() : env(make_env()) {
        TrainConfig cfg = make_standard_config(31, 8);
        cfg.optimizer.lr = 0.05;
        cfg.id_batch_size = 10;
        MlpModel base(env.model_spec, 31);
        train_standard(base, env.partition, env.labels, cfg);
        warm = base.parameters();
        const MlpSpec spec = env.model_spec;
        factory = [spec] { return std::make_unique<MlpModel>(spec, 0); };
    }

    TuneResult tune(const std::vector<ObjectiveConfig>& grid, int epochs = 5) const {
        return tune_hyperparams(grid, factory, warm, env.partition, env.labels,
                                env.outlier_train, env.outlier_validation, 77, epochs, 10);
    }
};

ObjectiveConfig oe_config(double beta) {
    ObjectiveConfig c;
    c.kind = ObjectiveKind::oe;
    c.beta = beta;
    return c;
}

} // namespace

TEST_CASE("tune_hyperparams") {
    const TuneFixture fix;

    SECTION("grid of one returns that config unflagged") {
        const TuneResult r = fix.tune({oe_config(1.0)});
        CHECK_FALSE(r.flagged);
        CHECK(r.chosen.kind == ObjectiveKind::oe);
        CHECK(r.chosen.beta == 1.0);
        REQUIRE(r.trials.size() == 1);
        CHECK(r.trials[0].qualified);
        CHECK(r.baseline_accuracy > 0.5);
    }
    SECTION("an OE term beats the do-nothing point on outlier AUROC") {
        const TuneResult r = fix.tune({oe_config(0.0), oe_config(5.0)}, 10);
        REQUIRE(r.trials.size() == 2);
        CHECK(r.trials[1].validation_auroc > r.trials[0].validation_auroc);
        CHECK_FALSE(r.flagged);
        CHECK(r.chosen.beta == 5.0);
    }
    SECTION("hyperparameters from the published operating range are usable") {
        ObjectiveConfig a1;
        a1.kind = ObjectiveKind::mixoe;
        a1.beta = 5.0;
        a1.alpha = 1.0;
        ObjectiveConfig a2 = a1;
        a2.alpha = 2.0;
        const TuneResult r = fix.tune({a1, a2});
        REQUIRE(r.trials.size() == 2);
        CHECK(r.chosen.kind == ObjectiveKind::mixoe);
        for (const TuneTrial& t : r.trials) {
            CHECK(t.validation_auroc >= 0.0);
            CHECK(t.validation_auroc <= 1.0);
        }
    }
    SECTION("accuracy collapse flags the result") {
        const TuneResult r = fix.tune({oe_config(1000.0)}, 10);
        REQUIRE(r.trials.size() == 1);
        CHECK_FALSE(r.trials[0].qualified);
        CHECK(r.flagged);
        CHECK(r.chosen.beta == 1000.0);
        CHECK(r.baseline_accuracy - r.trials[0].validation_accuracy > 0.01);
    }
    SECTION("argument validation") {
        CHECK_THROWS_AS(fix.tune({}), std::invalid_argument);
        DataPartition no_val;
        no_val.train = fix.env.partition.train;
        CHECK_THROWS_AS(tune_hyperparams({oe_config(1.0)}, fix.factory, fix.warm, no_val,
                                         fix.env.labels, fix.env.outlier_train,
                                         fix.env.outlier_validation, 1),
                        std::invalid_argument);
        OutlierPool empty;
        CHECK_THROWS_AS(tune_hyperparams({oe_config(1.0)}, fix.factory, fix.warm,
                                         fix.env.partition, fix.env.labels,
                                         fix.env.outlier_train, empty, 1),
                        std::invalid_argument);
    }
}

TEST_CASE("evaluate_environment") {
    ToyConfig cfg;
    cfg.image_hw = 8;
    cfg.train_per_class = 6;
    cfg.test_per_class = 3;
    cfg.noise = 0.1;
    const Dataset blobs = make_blobs(4, cfg);
    const Dataset rings = make_rings(4, cfg);

    const auto specs =
        make_holdout_splits(blobs.classes, 2, 1, 13, "blobs", {"rings"});
    EnvironmentData data;
    data.spec = specs[0];
    DataPartition part = partition_id_data(blobs, data.spec, 0.2, 13);
    data.id.train = part.train;
    data.id.validation = part.validation;
    data.id_test = AuditedExamples(part.test);
    data.fine_ood = AuditedExamples(collect_fine_ood(blobs, data.spec));
    std::map<std::string, Dataset> sources{{"rings", rings}};
    data.coarse_ood = AuditedExamples(assemble_coarse_ood(data.spec, sources));

    const LabelMap labels = make_label_map(data.spec.id_classes);
    MlpModel model(MlpSpec{64, {16}, 4}, 13);
    TrainConfig tc = make_standard_config(13, 4);
    tc.optimizer.lr = 0.05;
    tc.id_batch_size = 8;
    train_standard(model, data.id, labels, tc);

    const EvaluationResult res = evaluate_environment(model, data, ScorerKind::msp);
    CHECK(res.report.dataset == "blobs");
    CHECK(res.report.split_index == 1);
    CHECK(res.report.split_seed == 13);
    CHECK(res.report.scorer == "msp");
    CHECK(res.report.n_id == 4 * 3);
    CHECK(res.report.n_fine == 2 * 3);
    CHECK(res.report.n_coarse == 4 * 3);
    REQUIRE(res.report.id_accuracy.has_value());
    REQUIRE(res.report.auroc_fine.has_value());
    REQUIRE(res.report.auroc_coarse.has_value());
    REQUIRE(res.report.tnr95_fine.has_value());
    REQUIRE(res.report.tnr95_coarse.has_value());
    CHECK(res.table.scores.size() == 12 + 6 + 12);
    REQUIRE(res.mean_msp.count("id_test") == 1);
    REQUIRE(res.mean_msp.count("fine_ood") == 1);
    REQUIRE(res.mean_msp.count("coarse_ood") == 1);
    for (const auto& [origin, msp] : res.mean_msp) {
        CHECK(msp >= 0.25);
        CHECK(msp <= 1.0);
    }

    // ODIN with a temperature records both
    const EvaluationResult odin = evaluate_environment(model, data, ScorerKind::odin, 1000.0);
    CHECK(odin.report.scorer == "odin");
    CHECK(odin.report.temperature == 1000.0);
    CHECK(odin.table.temperature == 1000.0);

    // a missing coarse set leaves its metrics unset
    EnvironmentData no_coarse = data;
    no_coarse.coarse_ood = AuditedExamples(std::vector<Example>{});
    const EvaluationResult partial = evaluate_environment(model, no_coarse, ScorerKind::msp);
    CHECK_FALSE(partial.report.auroc_coarse.has_value());
    CHECK_FALSE(partial.report.tnr95_coarse.has_value());
    CHECK(partial.report.auroc_fine.has_value());
}
