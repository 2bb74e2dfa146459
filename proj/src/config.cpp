#include "orbitkit/config.hpp"

#include <sstream>

#include "orbitkit/io.hpp"
#include "orbitkit/rng.hpp"

namespace orbitkit {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DatasetConfig, scenes, first_seed, complexity_min, complexity_max, frames, height,
                                   width, amplitude_deg, frequency, radius, png)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CodecSection, kind, spatial_factor, latent_channels, hidden, checkpoint,
                                   train_steps, lr, batch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelSection, depth, width, heads, patch, adapter_hidden, pixel_cell, dual_branch,
                                   min_one_minus_t)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainSection, stage, steps, batch, lr_pretrained, lr_new, pixel_loss_weight,
                                   grad_clip, checkpoint_every, frames, frame_stride)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SampleSection, steps, guidance, png)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalSection, skip_reference_frames)

namespace {

using nlohmann::json;

bool compatible(const json& expected, const json& given) {
  if (expected.is_boolean()) return given.is_boolean();
  if (expected.is_string()) return given.is_string();
  if (expected.is_number_float()) return given.is_number();
  if (expected.is_number_unsigned()) return given.is_number_unsigned() || (given.is_number_integer() && given.get<std::int64_t>() >= 0);
  if (expected.is_number_integer()) return given.is_number_integer();
  if (expected.is_object()) return given.is_object();
  return expected.type() == given.type();
}

void merge_checked(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: " + (path.empty() ? std::string("document") : path) + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (!compatible(slot, it.value()))
      throw ConfigError("config: '" + key + "' expects " + std::string(slot.type_name()) + ", got " + it.value().dump());
    if (slot.is_object())
      merge_checked(slot, it.value(), key);
    else
      slot = it.value();
  }
}

}  // namespace

json RunConfig::to_json() const {
  return json{{"seed", seed},   {"dataset", dataset}, {"codec", codec}, {"model", model},
              {"train", train}, {"sample", sample},   {"eval", eval}};
}

RunConfig RunConfig::from_json(const json& doc) {
  json full = RunConfig{}.to_json();
  merge_checked(full, doc, "");
  RunConfig c;
  c.seed = full["seed"].get<std::uint64_t>();
  c.dataset = full["dataset"].get<DatasetConfig>();
  c.codec = full["codec"].get<CodecSection>();
  c.model = full["model"].get<ModelSection>();
  c.train = full["train"].get<TrainSection>();
  c.sample = full["sample"].get<SampleSection>();
  c.eval = full["eval"].get<EvalSection>();
  c.validate();
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("config: unknown key '" + path + "'");
    node = &(*node)[parts[i]];
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (!compatible(*node, value))
    throw ConfigError("config: '" + path + "' expects " + std::string(node->type_name()) + ", got " + text);
  *node = value;
}

RunConfig RunConfig::load(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json doc = RunConfig{}.to_json();
  if (!file.empty()) {
    const json user = json::parse(read_file(file), nullptr, false);
    if (user.is_discarded()) throw ConfigError("config: " + file.string() + " is not valid JSON");
    merge_checked(doc, user, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (dataset.scenes < 1) fail("dataset.scenes must be >= 1");
  if (dataset.complexity_min < 1 || dataset.complexity_max > 8 || dataset.complexity_min > dataset.complexity_max)
    fail("dataset complexity range must lie in [1, 8]");
  if (dataset.frames < 2) fail("dataset.frames must be >= 2");
  if (dataset.height < 1 || dataset.width < 1) fail("dataset resolution must be positive");
  if (!(dataset.radius > 1.0)) fail("dataset.radius must exceed the unit scene sphere");
  if (codec.kind != "identity" && codec.kind != "learned") fail("codec.kind must be identity or learned");
  if (codec.spatial_factor < 1) fail("codec.spatial_factor must be positive");
  if (dataset.height % codec.spatial_factor || dataset.width % codec.spatial_factor)
    fail("codec.spatial_factor must divide the dataset resolution");
  if (codec.train_steps < 0 || codec.batch < 1 || !(codec.lr > 0)) fail("codec training settings out of range");
  if (train.frames < 2 || train.frame_stride < 1) fail("train.frames must be >= 2 and train.frame_stride >= 1");
  if (sample.steps < 1) fail("sample.steps must be >= 1");
  try {
    model_config().validate();
    train_config().validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.depth = model.depth;
  m.width = model.width;
  m.heads = model.heads;
  m.patch = model.patch;
  m.frames = train.frames;
  m.latent_h = dataset.height / codec.spatial_factor;
  m.latent_w = dataset.width / codec.spatial_factor;
  m.latent_channels = codec.kind == "identity" ? 3 * codec.spatial_factor * codec.spatial_factor : codec.latent_channels;
  m.adapter_hidden = model.adapter_hidden;
  m.pixel_cell = codec.spatial_factor;
  m.dual_branch = model.dual_branch;
  m.min_one_minus_t = model.min_one_minus_t;
  return m;
}

CodecConfig RunConfig::codec_config() const {
  if (codec.kind == "identity") return CodecConfig::identity(codec.spatial_factor);
  return CodecConfig::learned(codec.spatial_factor, codec.latent_channels, codec.hidden, derive_seed(seed, "codec.init"));
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.stage = train.stage;
  t.steps = train.steps;
  t.batch = train.batch;
  t.lr_pretrained = train.lr_pretrained;
  t.lr_new = train.lr_new;
  t.pixel_loss_weight = train.pixel_loss_weight;
  t.grad_clip = train.grad_clip;
  t.seed = seed;
  t.checkpoint_every = train.checkpoint_every;
  return t;
}

}  // namespace orbitkit
