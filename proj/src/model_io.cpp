#include "followbench/model_io.hpp"

#include <fmt/format.h>

#include "followbench/common.hpp"
#include "followbench/ddpg.hpp"
#include "followbench/neural.hpp"

namespace followbench {
namespace {

Mlp mlp_from_doc(const nlohmann::json& doc) {
  Mlp net(mlp_spec_from_json(doc.at("spec")));
  assign_params(net.params(), params_from_json(doc.at("tensors")));
  return net;
}

}  // namespace

ModelHandle load_model(const nlohmann::json& doc) {
  const auto kind = doc.at("kind").get<std::string>();
  const int version = doc.value("version", 1);
  if (version != 1) throw Error(fmt::format("model '{}': unsupported version {}", kind, version));
  try {
    if (kind == "idm") {
      IDMOptions opt;
      if (doc.contains("options")) {
        opt.unfloored_gap = doc["options"].value("unfloored_gap", opt.unfloored_gap);
        opt.min_accel_mps2 = doc["options"].value("min_accel_mps2", opt.min_accel_mps2);
      }
      return std::make_shared<IDMPolicy>(idm_params_from_json(doc.at("params")), opt);
    }
    if (kind == "ghr") {
      GHROptions opt;
      AccelClip clip;
      if (doc.contains("options")) {
        const auto& o = doc["options"];
        opt.stimulus_leader_minus_follower =
            o.value("stimulus_leader_minus_follower", opt.stimulus_leader_minus_follower);
        opt.min_speed_for_negative_exponent_mps = o.value(
            "min_speed_for_negative_exponent_mps", opt.min_speed_for_negative_exponent_mps);
      }
      if (doc.contains("clip")) {
        clip.min_mps2 = doc["clip"].value("min_mps2", clip.min_mps2);
        clip.max_mps2 = doc["clip"].value("max_mps2", clip.max_mps2);
      }
      return std::make_shared<GHRPolicy>(ghr_params_from_json(doc.at("params")), opt, clip);
    }
    if (kind == "constant")
      return std::make_shared<ConstantPolicy>(doc.at("accel_mps2").get<double>());
    if (kind == "mlp")
      return std::make_shared<MlpPolicy>(mlp_from_doc(doc),
                                         Normalizer::from_json(doc.at("normalizer")));
    if (kind == "ddpg_actor") return std::make_shared<DdpgActorPolicy>(mlp_from_doc(doc));
    if (kind == "recurrent") {
      RecurrentNet net(recurrent_spec_from_json(doc.at("spec")));
      assign_params(net.params(), params_from_json(doc.at("tensors")));
      return std::make_shared<RecurrentPolicy>(std::move(net),
                                               Normalizer::from_json(doc.at("normalizer")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("model '{}': malformed document: {}", kind, e.what()));
  }
  throw Error(fmt::format(
      "unknown model kind '{}' (idm, ghr, constant, mlp, recurrent, ddpg_actor)", kind));
}

ModelHandle load_model(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
  return load_model(doc);
}

void save_model(const Policy& model, const std::filesystem::path& path) {
  write_file(path, model.to_json().dump(2) + "\n");
}

}  // namespace followbench
