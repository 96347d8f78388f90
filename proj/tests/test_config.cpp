#include <gtest/gtest.h>

#include <string>

#include "vitc/config.hpp"
#include "vitc/errors.hpp"

using namespace vitc;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(VITC_SOURCE_DIR) / "configs";

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "t.toml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, DefaultFileEqualsBuiltInDefaults) {
    EXPECT_EQ(to_json(load_config(kConfigs / "default.toml")), to_json(ExperimentConfig{}));
}

TEST(Config, DeskProfileIsValid) {
    ExperimentConfig cfg = load_config(kConfigs / "desk.toml");
    EXPECT_EQ(cfg.model.backbone.input_size, 96);
    EXPECT_EQ(cfg.model.conditioning.blocks, cfg.model.unet.levels - 1);
    EXPECT_NO_THROW(validate(cfg));
}

TEST(Config, PartialFileKeepsDefaults) {
    ExperimentConfig cfg = parse_config("[train]\nlr = 0.5\n");
    EXPECT_EQ(cfg.train.lr, 0.5);
    EXPECT_EQ(cfg.train.batch_size, ExperimentConfig{}.train.batch_size);
}

TEST(Config, UnknownKeyNamesPath) {
    const std::string e = error_of("[train]\nlearning_rate = 0.1\n");
    EXPECT_NE(e.find("train.learning_rate"), std::string::npos) << e;
    EXPECT_NE(e.find("unknown"), std::string::npos) << e;
    EXPECT_NE(error_of("[model.unet]\nlevelz = 3\n").find("model.unet.levelz"), std::string::npos);
}

TEST(Config, TypeErrorNamesPath) {
    const std::string e = error_of("[train]\nbatch_size = \"big\"\n");
    EXPECT_NE(e.find("train.batch_size"), std::string::npos) << e;
    EXPECT_NE(error_of("[model]\nkind = 3\n").find("model.kind"), std::string::npos);
}

TEST(Config, SyntaxErrorHasLocation) {
    const std::string e = error_of("[train\nlr = 1\n");
    EXPECT_NE(e.find("t.toml:1"), std::string::npos) << e;
}

TEST(Config, RangeValidation) {
    EXPECT_FALSE(error_of("[train]\nlr = -1.0\n").empty());
    EXPECT_FALSE(error_of("[model.conditioning]\nheads = 7\n").empty());
    EXPECT_FALSE(error_of("[model.backbone]\ninput_size = 100\n").empty());
    EXPECT_FALSE(error_of("[model.unet]\nlevels = 4\n").empty());
    EXPECT_FALSE(error_of("[train.loss]\nw_focal = 0.0\nw_dice = 0.0\n").empty());
    EXPECT_FALSE(error_of("[data]\nclasses = 9\n").empty());
    EXPECT_FALSE(error_of("[data]\nslice_axis = 3\n").empty());
}

TEST(Config, Overrides) {
    ExperimentConfig cfg;
    apply_override(cfg, "train.lr=0.003");
    apply_override(cfg, "model.kind=hybrid");
    apply_override(cfg, "model.unet.reverse_fusion=true");
    apply_override(cfg, "train.stage=\"stage1\"");
    EXPECT_EQ(cfg.train.lr, 0.003);
    EXPECT_EQ(cfg.model.kind, "hybrid");
    EXPECT_TRUE(cfg.model.unet.reverse_fusion);
    EXPECT_EQ(cfg.train.stage, "stage1");
    EXPECT_THROW(apply_override(cfg, "train.nope=1"), ConfigError);
    EXPECT_THROW(apply_override(cfg, "novalue"), ConfigError);
    EXPECT_THROW(apply_override(cfg, "train.batch_size=abc"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    ExperimentConfig cfg = load_config(kConfigs / "desk.toml");
    cfg.train.seed = 17;
    cfg.model.init_seed = 123456789012345ULL;
    auto j = to_json(cfg);
    EXPECT_EQ(to_json(experiment_from_json(j)), j);
    EXPECT_EQ(j["train"]["lr"], cfg.train.lr);
    EXPECT_THROW(experiment_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, MissingFile) {
    EXPECT_THROW(load_config("/nonexistent/x.toml"), ConfigError);
}
