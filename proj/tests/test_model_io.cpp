#include <filesystem>

#include <gtest/gtest.h>

#include "followbench/common.hpp"
#include "followbench/ddpg.hpp"
#include "followbench/model_io.hpp"
#include "followbench/neural.hpp"
#include "test_util.hpp"

namespace fb = followbench;
namespace fs = std::filesystem;

namespace {

std::vector<fb::ModelHandle> every_kind() {
  const auto train = fb::testing::synthetic_events(4, fb::IDMParams{}, 60, 15.0);
  const auto val = fb::testing::synthetic_events(2, fb::IDMParams{}, 61, 15.0);
  fb::AdamConfig adam;
  adam.epochs = 2;
  adam.batch_size = 64;
  fb::MLPSpec mlp{{3, 8, 8, 1}, fb::OutputActivation::kLinear, 1.0};
  fb::RecurrentSpec rnn;
  rnn.window_steps = 4;
  rnn.hidden_size = 5;
  rnn.num_layers = 2;
  rnn.dropout_prob = 0.2;
  fb::DDPGConfig ddpg;
  ddpg.hidden_size = 6;
  std::mt19937_64 rng(3);
  const fb::ActorCritic nets(ddpg, rng);
  return {std::make_shared<fb::IDMPolicy>(fb::IDMParams{1.4, 2.0, 25, 1.2, 2.5, 4}),
          std::make_shared<fb::GHRPolicy>(fb::GHRParams{1.5, 0.5, 1.0, 0.3}),
          std::make_shared<fb::ConstantPolicy>(-0.25),
          fb::train_supervised(mlp, train, val, adam).policy,
          fb::train_supervised(rnn, train, val, adam).policy,
          std::make_shared<fb::DdpgActorPolicy>(nets.actor)};
}

}  // namespace

TEST(ModelIo, EveryKindRoundTripsThroughJson) {
  const auto events = fb::testing::synthetic_events(2, fb::IDMParams{}, 62, 15.0);
  const auto dir = fs::temp_directory_path() / "followbench_model_io";
  fs::create_directories(dir);
  for (const auto& model : every_kind()) {
    SCOPED_TRACE(model->kind());
    const auto doc = model->to_json();
    const auto loaded = fb::load_model(doc);
    EXPECT_EQ(loaded->kind(), model->kind());
    EXPECT_EQ(loaded->to_json().dump(), doc.dump());
    const auto path = dir / (model->kind() + ".json");
    fb::save_model(*model, path);
    const auto from_file = fb::load_model(path);
    EXPECT_EQ(from_file->to_json().dump(), doc.dump());
    for (const auto& e : events)
      EXPECT_TRUE(fb::rollout(*model, e).spacing_sim_m == fb::rollout(*from_file, e).spacing_sim_m);
  }
  fs::remove_all(dir);
}

TEST(ModelIo, RejectsUnknownKindsVersionsAndMalformedDocuments) {
  EXPECT_THROW(fb::load_model(nlohmann::json{{"kind", "svm"}}), fb::Error);
  auto doc = fb::IDMPolicy(fb::IDMParams{}).to_json();
  doc["version"] = 2;
  EXPECT_THROW(fb::load_model(doc), fb::Error);
  EXPECT_THROW(fb::load_model(nlohmann::json{{"kind", "mlp"}}), fb::Error);
  auto bad = fb::IDMPolicy(fb::IDMParams{}).to_json();
  bad["params"]["a0_mps2"] = -1.0;
  EXPECT_THROW(fb::load_model(bad), fb::Error);
  const auto path = fs::temp_directory_path() / "followbench_not_json.json";
  fb::write_file(path.string(), "{ nope");
  EXPECT_THROW(fb::load_model(path), fb::Error);
  fs::remove(path);
}
