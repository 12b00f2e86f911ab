#include "melnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "melnet/codec.hpp"
#include "melnet/nms.hpp"
#include "melnet/rng.hpp"
#include "melnet/weights_io.hpp"

namespace melnet {

namespace fs = std::filesystem;

void TrainingConfig::validate(int anchors_per_scale) const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw std::invalid_argument(std::string("training config: ") + name + " must be positive");
  };
  positive(learning_rate, "learning_rate");
  if (!(weight_decay >= 0)) throw std::invalid_argument("training config: weight_decay must be non-negative");
  positive(batch_size, "batch_size");
  positive(epochs, "epochs");
  positive(loss.box, "loss.box");
  positive(loss.obj, "loss.obj");
  positive(loss.noobj, "loss.noobj");
  positive(loss.cls, "loss.cls");
  if (input_size <= 0 || input_size % 32 != 0) {
    throw std::invalid_argument("training config: input_size must be a positive multiple of 32");
  }
  if (static_cast<int>(anchors.size()) != 2 * anchors_per_scale) {
    throw std::invalid_argument("training config: expected " + std::to_string(2 * anchors_per_scale) +
                                " anchors, got " + std::to_string(anchors.size()));
  }
  assign_to_scales(anchors, 2);
}

namespace {

std::vector<std::vector<Anchor>> scale_anchors(const TrainingConfig& cfg) { return assign_to_scales(cfg.anchors, 2); }

std::vector<int> grids(int input_size) { return {coarse_grid(input_size), fine_grid(input_size)}; }

// Canvas-normalized boxes of a letterboxed sample, minus any that vanish.
std::vector<LabeledBox> canvas_boxes(const std::vector<LabeledBox>& boxes, const LetterboxInfo& info) {
  std::vector<LabeledBox> out;
  for (const auto& b : boxes) {
    LabeledBox lb{to_letterbox(b.box, info), b.class_id};
    if (lb.box.width * info.size >= 1e-6 && lb.box.height * info.size >= 1e-6) out.push_back(lb);
  }
  return out;
}

struct PreparedSample {
  Image image;
  std::vector<LabeledBox> boxes;
};

PreparedSample prepare(const Sample& s, const TrainingConfig& cfg, std::optional<std::uint64_t> augment_seed) {
  Image img = s.image;
  std::vector<LabeledBox> boxes = s.boxes;
  if (augment_seed) {
    // Redraw a few times when augmentation loses every box, then fall back
    // to the original sample.
    for (std::uint64_t attempt = 0; attempt < 4; ++attempt) {
      Augmented a = augment(s.image, s.boxes, cfg.augment_plan, derive_seed(*augment_seed, attempt));
      if (!a.lost_all_boxes) {
        img = std::move(a.image);
        boxes = std::move(a.boxes);
        break;
      }
    }
  }
  LetterboxInfo info;
  PreparedSample p;
  p.image = letterbox(img, cfg.input_size, &info);
  p.boxes = canvas_boxes(boxes, info);
  return p;
}

PreparedBatch assemble(std::vector<PreparedSample> prepared, const ArchSpec& spec, const TrainingConfig& cfg) {
  PreparedBatch batch;
  std::vector<Image> images;
  const auto anchors = scale_anchors(cfg);
  const auto g = grids(cfg.input_size);
  for (auto& p : prepared) {
    batch.targets.push_back(encode_targets(p.boxes, anchors, g, cfg.input_size, spec.num_classes, cfg.ignore_iou));
    std::vector<GroundTruth> truth;
    for (const auto& b : p.boxes) truth.push_back({yolo_to_xyxy(b.box, cfg.input_size, cfg.input_size), b.class_id});
    batch.truths.push_back(std::move(truth));
    images.push_back(std::move(p.image));
  }
  batch.images = to_tensor(images);
  return batch;
}

}  // namespace

PreparedBatch prepare_batch(std::span<const Sample> samples, const ArchSpec& spec, const TrainingConfig& cfg) {
  std::vector<PreparedSample> prepared;
  for (const auto& s : samples) prepared.push_back(prepare(s, cfg, std::nullopt));
  return assemble(std::move(prepared), spec, cfg);
}

std::vector<std::vector<Detection>> postprocess(const Heads& heads, const std::vector<std::vector<Anchor>>& anchors,
                                                int num_classes, double conf_threshold, double nms_iou) {
  auto coarse = decode(heads.coarse, anchors[0], 32.0, conf_threshold, num_classes);
  auto fine = decode(heads.fine, anchors[1], 16.0, conf_threshold, num_classes);
  std::vector<std::vector<Detection>> out;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    auto all = std::move(coarse[i]);
    all.insert(all.end(), fine[i].begin(), fine[i].end());
    out.push_back(nms(all, nms_iou));
  }
  return out;
}

EvalResult evaluate(const Network& net, const SampleSource& source, const TrainingConfig& cfg) {
  const ArchSpec& spec = net.spec();
  const auto anchors = scale_anchors(cfg);
  EvalResult r;
  std::vector<std::vector<GroundTruth>> truths;
  double loss_sum = 0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < source.size(); start += cfg.batch_size) {
    std::vector<PreparedSample> prepared;
    for (std::size_t i = start; i < std::min(source.size(), start + cfg.batch_size); ++i) {
      prepared.push_back(prepare(source.load(i), cfg, std::nullopt));
    }
    PreparedBatch batch = assemble(std::move(prepared), spec, cfg);
    const Heads heads = net.infer(batch.images);
    const std::vector<Tensor> hs = {heads.coarse, heads.fine};
    loss_sum += detection_loss(hs, batch.targets, cfg.loss).parts.total;
    ++batches;
    r.counts += batch_metrics(hs, batch.targets);
    auto dets = postprocess(heads, anchors, spec.num_classes, cfg.conf_threshold, cfg.nms_iou);
    for (auto& d : dets) r.detections.push_back(std::move(d));
    for (auto& t : batch.truths) truths.push_back(std::move(t));
  }
  r.per_class = per_class_ap(r.detections, truths, spec.num_classes, 0.5);
  r.map = mean_ap(r.per_class);
  r.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
  return r;
}

std::vector<Detection> predict(const Network& net, const Image& image, const TrainingConfig& cfg,
                               double conf_threshold) {
  LetterboxInfo info;
  const Image canvas = letterbox(image, cfg.input_size, &info);
  const Heads heads = net.infer(to_tensor({&canvas, 1}));
  auto dets = postprocess(heads, scale_anchors(cfg), net.spec().num_classes, conf_threshold, cfg.nms_iou)[0];
  std::vector<Detection> out;
  for (auto d : dets) {
    d.box = from_letterbox(d.box, info);
    // Boxes lying entirely in the padding collapse onto the source border.
    if (d.box.width() > 0 && d.box.height() > 0) out.push_back(d);
  }
  return out;
}

std::uint64_t config_hash(const ArchSpec& spec, const TrainingConfig& cfg) {
  std::ostringstream os;
  char buf[64];
  auto num = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << key << '=' << buf << '\n';
  };
  os << to_text(spec);
  num("learning_rate", cfg.learning_rate);
  num("weight_decay", cfg.weight_decay);
  num("batch_size", cfg.batch_size);
  num("input_size", cfg.input_size);
  os << "seed=" << cfg.seed << '\n';
  num("loss.box", cfg.loss.box);
  num("loss.obj", cfg.loss.obj);
  num("loss.noobj", cfg.loss.noobj);
  num("loss.cls", cfg.loss.cls);
  num("augment", cfg.augment);
  const auto& p = cfg.augment_plan;
  for (double v : {p.flip_prob, p.crop_prob, p.min_crop, p.rotate_prob, p.max_rotation_deg, p.jitter_prob, p.brightness,
                   p.contrast, p.saturation, p.min_area_kept})
    num("augment_plan", v);
  num("ignore_iou", cfg.ignore_iou);
  num("single_precision", cfg.single_precision);
  for (const auto& a : cfg.anchors) {
    num("anchor.pw", a.pw);
    num("anchor.ph", a.ph);
  }
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Trainer::Trainer(ArchSpec spec, TrainingConfig cfg, const SampleSource& train, const SampleSource* val)
    : spec_(std::move(spec)), cfg_(std::move(cfg)), train_(train), val_(val) {
  validate(spec_);
  cfg_.validate(spec_.anchors_per_scale);
  if (spec_.input_size != cfg_.input_size) spec_.input_size = cfg_.input_size;
  if (train_.size() == 0) throw TrainingError("training set is empty");
  net_ = Network::build(spec_, derive_seed(cfg_.seed, 0x5eed));
  if (cfg_.single_precision) net_.round_to_float();
}

double Trainer::step(std::span<const std::size_t> indices, int epoch, std::size_t batch_no) {
  std::vector<PreparedSample> prepared;
  for (std::size_t i : indices) {
    std::optional<std::uint64_t> aug;
    if (cfg_.augment) aug = derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch) + 1, i);
    prepared.push_back(prepare(train_.load(i), cfg_, aug));
  }
  PreparedBatch batch = assemble(std::move(prepared), spec_, cfg_);

  net_.zero_grad();
  const Heads heads = net_.forward(batch.images, Mode::Training);
  const std::vector<Tensor> hs = {heads.coarse, heads.fine};
  LossResult loss = detection_loss(hs, batch.targets, cfg_.loss);
  if (!std::isfinite(loss.parts.total)) {
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                        std::to_string(batch_no) + " (box " + std::to_string(loss.parts.box) + ", obj " +
                        std::to_string(loss.parts.obj) + ", noobj " + std::to_string(loss.parts.noobj) + ", cls " +
                        std::to_string(loss.parts.cls) + ")");
  }
  loss.total.backward();
  AdamConfig ac;
  ac.learning_rate = cfg_.learning_rate;
  ac.weight_decay = cfg_.weight_decay;
  adam_step(net_.parameters(), adam_, ac);
  if (cfg_.single_precision) net_.round_to_float();
  return loss.parts.total;
}

EpochRow Trainer::run_epoch() {
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(epoch_) + 1));
  rng.shuffle(order);

  double loss_sum = 0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    loss_sum += step({order.data() + start, end - start}, epoch_, batches);
    ++batches;
  }
  const EvalResult ev = evaluate(net_, val_ ? *val_ : train_, cfg_);
  ++epoch_;
  EpochRow row{epoch_, ev.map, loss_sum / static_cast<double>(batches), ev.counts.class_acc(), ev.counts.obj_acc(),
               ev.counts.noobj_acc()};
  log_.push_back(row);
  return row;
}

void Trainer::run(const std::function<void(const EpochRow&)>& on_epoch) {
  while (epoch_ < cfg_.epochs) {
    const EpochRow row = run_epoch();
    if (on_epoch) on_epoch(row);
  }
}

namespace {
fs::path with_suffix(const fs::path& prefix, const char* ext) { return fs::path(prefix.string() + ext); }
}  // namespace

void Trainer::save_checkpoint(const fs::path& prefix, std::span<const std::string> class_names) {
  if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
  save_weights(net_, with_suffix(prefix, ".melw"));
  write_file_bytes(with_suffix(prefix, ".mela"), encode_adam_state(adam_));
  nlohmann::json meta;
  meta["epoch"] = epoch_;
  meta["config_hash"] = config_hash(spec_, cfg_);
  meta["weights"] = with_suffix(prefix, ".melw").filename().string();
  meta["optimizer"] = with_suffix(prefix, ".mela").filename().string();
  meta["arch"] = to_text(spec_);
  meta["input_size"] = cfg_.input_size;
  meta["nms_iou"] = cfg_.nms_iou;
  meta["anchors"] = nlohmann::json::array();
  for (const auto& a : cfg_.anchors) meta["anchors"].push_back({a.pw, a.ph});
  meta["class_names"] = std::vector<std::string>(class_names.begin(), class_names.end());
  meta["metrics"] = nlohmann::json::array();
  for (const auto& r : log_) {
    meta["metrics"].push_back({r.epoch, r.map, r.loss, r.class_acc, r.obj_acc, r.noobj_acc});
  }
  // Metadata goes last and atomically: its presence marks a complete checkpoint.
  write_text_file(with_suffix(prefix, ".json.tmp"), meta.dump(2) + "\n");
  fs::rename(with_suffix(prefix, ".json.tmp"), with_suffix(prefix, ".json"));
}

void Trainer::load_checkpoint(const fs::path& prefix) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(with_suffix(prefix, ".json")));
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError("unreadable checkpoint metadata " + with_suffix(prefix, ".json").string() + ": " + e.what());
  }
  if (meta.at("config_hash").get<std::uint64_t>() != config_hash(spec_, cfg_)) {
    throw TrainingError("checkpoint " + prefix.string() + " was written with a different configuration");
  }
  const fs::path dir = prefix.parent_path();
  Network net = load_weights(dir / meta.at("weights").get<std::string>(), spec_);
  AdamState adam = decode_adam_state(read_file_bytes(dir / meta.at("optimizer").get<std::string>()));
  std::vector<EpochRow> log;
  for (const auto& r : meta.at("metrics")) {
    log.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                   r.at(4).get<double>(), r.at(5).get<double>()});
  }
  net_ = std::move(net);
  adam_ = std::move(adam);
  epoch_ = meta.at("epoch").get<int>();
  log_ = std::move(log);
}

Model load_model(const fs::path& checkpoint) {
  fs::path meta_path = checkpoint;
  if (checkpoint.extension() == ".melw" || checkpoint.extension() == ".mela") {
    meta_path.replace_extension(".json");
  } else if (checkpoint.extension() != ".json") {
    meta_path = with_suffix(checkpoint, ".json");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(meta_path));
    Model m;
    const ArchSpec spec = arch_from_text(meta.at("arch").get<std::string>());
    m.cfg.input_size = meta.at("input_size").get<int>();
    m.cfg.nms_iou = meta.at("nms_iou").get<double>();
    m.cfg.anchors.clear();
    for (const auto& a : meta.at("anchors")) m.cfg.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
    m.class_names = meta.at("class_names").get<std::vector<std::string>>();
    if (m.class_names.empty()) {
      for (int c = 0; c < spec.num_classes; ++c) m.class_names.push_back(std::to_string(c));
    }
    if (static_cast<int>(m.class_names.size()) != spec.num_classes) {
      throw TrainingError("checkpoint " + meta_path.string() + " lists " + std::to_string(m.class_names.size()) +
                          " class names for " + std::to_string(spec.num_classes) + " classes");
    }
    m.net = load_weights(meta_path.parent_path() / meta.at("weights").get<std::string>(), spec);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError("unreadable checkpoint metadata " + meta_path.string() + ": " + e.what());
  }
}

std::string metrics_csv(std::span<const EpochRow> rows) {
  std::string out = "epoch,map,loss,class_acc,obj_acc,noobj_acc\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.4f,%.4f,%.4f\n", r.epoch, r.map, r.loss, r.class_acc, r.obj_acc,
                  r.noobj_acc);
    out += buf;
  }
  return out;
}

std::vector<EpochRow> parse_metrics_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line.rfind("epoch,map,loss,class_acc,obj_acc,noobj_acc", 0) != 0) {
    throw std::invalid_argument("metrics CSV lacks the expected header");
  }
  std::vector<EpochRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.back() == '\r') line.pop_back();
    EpochRow r;
    int used = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf%n", &r.epoch, &r.map, &r.loss, &r.class_acc, &r.obj_acc,
                    &r.noobj_acc, &used) != 6 ||
        static_cast<std::size_t>(used) != line.size()) {
      throw std::invalid_argument("metrics CSV line " + std::to_string(lineno) + " is malformed: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace melnet
