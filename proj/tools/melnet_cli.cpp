#include <CLI11.hpp>
#include <iostream>

#include "melnet/commands.hpp"

using namespace melnet;

int main(int argc, char** argv) {
  CLI::App app{"MelNet detector: data conversion, anchors, training, evaluation, prediction and reports"};
  app.require_subcommand(1);

  ConvertArgs convert;
  auto* c = app.add_subcommand("convert", "Convert KITTI labels to YOLO form and split 80/20");
  c->add_option("--kitti-root", convert.kitti_root, "KITTI root (holding label_2/ and image_2/, or training/)")
      ->required();
  c->add_option("--out", convert.out, "Output directory")->required();
  c->add_option("--train-fraction", convert.train_fraction, "Fraction of images in the training split")
      ->check(CLI::Range(0.0, 1.0));
  c->add_option("--seed", convert.seed, "Split seed");

  AnchorsArgs anchors;
  auto* a = app.add_subcommand("anchors", "Cluster letterboxed box sizes into anchors");
  a->add_option("--data", anchors.manifests, "Dataset manifest(s)")->required()->check(CLI::ExistingFile);
  a->add_option("--out", anchors.out, "Output directory (anchors.txt)")->required();
  a->add_option("--k", anchors.k, "Number of anchors")->check(CLI::PositiveNumber);
  a->add_option("--seed", anchors.seed, "Clustering seed");
  a->add_option("--input-size", anchors.input_size, "Letterbox size")->check(CLI::PositiveNumber);
  a->add_option("--num-classes", anchors.num_classes, "Class count of the label files")->check(CLI::PositiveNumber);
  a->add_option("--restarts", anchors.restarts, "k-means restarts")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train from a JSON run config");
  t->add_option("--config", train.config, "Run config (see docs/config.md)")->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Output directory, overriding output_dir");
  t->add_flag("--resume", train.resume, "Continue from the latest checkpoint");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Per-class AP and mAP on a manifest");
  e->add_option("--data", eval.data, "Evaluation manifest")->required()->check(CLI::ExistingFile);
  auto* ew = e->add_option("--weights", eval.weights, "Checkpoint (.melw, .json or prefix)");
  auto* ed = e->add_option("--detections", eval.detections, "Directory of <stem>.txt detection dumps");
  ew->excludes(ed);
  e->add_option("--classes", eval.class_names, "Class names for detection dumps")->delimiter(',');
  e->add_option("--out", eval.out, "Output directory (eval.json, ap_table.txt)")->required();
  e->add_option("--conf", eval.conf, "Score threshold")->check(CLI::Range(0.0, 1.0));
  e->add_option("--iou", eval.iou, "Match IoU threshold")->check(CLI::Range(0.0, 1.0));

  PredictArgs predict;
  auto* p = app.add_subcommand("predict", "Write per-image detection files");
  p->add_option("--weights", predict.weights, "Checkpoint (.melw, .json or prefix)")->required();
  p->add_option("--images", predict.images, "PNG files or directories")->required();
  p->add_option("--out", predict.out, "Output directory")->required();
  p->add_option("--conf", predict.conf, "Score threshold")->check(CLI::Range(0.0, 1.0));
  p->add_option("--nms", predict.nms, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  p->add_flag("--annotate", predict.annotate, "Also write box-drawn copies under annotated/");

  ReportArgs report;
  auto* r = app.add_subcommand("report", "SVG charts and an epoch summary from metrics.csv");
  r->add_option("--metrics-csv", report.metrics_csv, "Metrics CSV written by train")
      ->required()
      ->check(CLI::ExistingFile);
  r->add_option("--out", report.out, "Output directory")->required();
  r->add_option("--epochs", report.epochs, "Summary epochs (default 50, 100, ...)")->delimiter(',');
  r->add_option("--ap", report.ap_report, "eval.json for the per-class AP chart")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  if (c->parsed()) return cmd_convert(convert, std::cout, std::cerr);
  if (a->parsed()) return cmd_anchors(anchors, std::cout, std::cerr);
  if (t->parsed()) return cmd_train(train, std::cout, std::cerr);
  if (e->parsed()) return cmd_eval(eval, std::cout, std::cerr);
  if (p->parsed()) return cmd_predict(predict, std::cout, std::cerr);
  return cmd_report(report, std::cout, std::cerr);
}
