#pragma once

// Command-line front end. run() never throws: failures print one line
//   error: kind=<kind> exit=<code> message="<text>"
// to stderr and return the matching exit code.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sganc/codec.hpp"
#include "sganc/irwin_hall.hpp"
#include "sganc/pipeline.hpp"
#include "sganc/synth.hpp"
#include "sganc/trainer.hpp"

namespace sganc::cli {

enum ExitCode : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kIo = 3,
  kDigest = 4,
  kFormat = 5,
  kNumeric = 6,
  kVerification = 7,
};

class VerificationFailed : public Error {
 public:
  using Error::Error;
};

struct Options {
  std::string input;
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::optional<std::size_t> steps;
  unsigned g = kDefaultGap;
  std::string stages;
  std::string model;
  std::string entropy_model;
  std::string intra_model;
  std::size_t frames = 100;
  double rho = 0.99;
  std::string lambdas = "1e-4,1e-5,1e-6";
  std::size_t samples = 1000000;
  std::size_t layers = kDeskLayers;
  std::size_t channels = kDeskChannels;
  std::size_t coupling_layers = FlowConfig{}.coupling_layers;
  std::size_t hidden = 0;
  bool flattened = false;
  bool refresh = false;
  bool inter = false;
  bool allow_truncated = false;
  bool intra_set = false;
  std::size_t mixture = 1;
  std::size_t intra_steps = 0;
  std::string eval_input;
};

namespace detail {

inline std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  std::string q;
  for (char c : s) {
    if (c == '"' || c == '\\') q += '\\';
    q += c;
  }
  return q;
}

inline int fail(std::ostream& err, const char* kind, int code, const std::string& msg) {
  err << "error: kind=" << kind << " exit=" << code << " message=\"" << one_line(msg) << "\"\n";
  return code;
}

inline void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline TrainConfig train_config(const Options& o) {
  TrainConfig cfg;
  if (!o.config.empty()) cfg.apply(load_key_values(o.config));
  cfg.apply_env();
  if (o.seed) cfg.seed = *o.seed;
  if (o.lambda) cfg.lambda = *o.lambda;
  if (o.steps) cfg.steps = *o.steps;
  return cfg;
}

inline StageLayout layout_for(const Options& o, std::size_t layers) {
  if (!o.stages.empty()) return StageLayout::parse(o.stages, layers);
  return layers == kFullLayers ? StageLayout::full() : StageLayout::scaled(layers);
}

inline FlowConfig flow_config(const Options& o) {
  FlowConfig f;
  f.coupling_layers = o.coupling_layers;
  f.hidden = o.hidden;
  f.granularity = o.flattened ? FlowGranularity::Flattened : FlowGranularity::RowShared;
  return f;
}

inline std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() || !(v >= 0)) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("bad lambda '" + item + "' in --lambdas");
    }
  }
  if (out.empty()) throw ConfigError("--lambdas is empty");
  return out;
}

/// Resolves --model/--entropy-model/--intra-model; --model may name a
/// training output directory.
inline CodecBundle load_bundle(const Options& o, unsigned g) {
  namespace fs = std::filesystem;
  std::string flow = o.model, ent = o.entropy_model, intra = o.intra_model;
  if (fs::is_directory(o.model)) {
    const fs::path dir(o.model);
    flow = (dir / "flow.sgflow").string();
    if (ent.empty()) ent = (dir / "entropy.sgent").string();
    if (intra.empty() && fs::exists(dir / "intra.sgent")) intra = (dir / "intra.sgent").string();
  }
  if (ent.empty()) throw ConfigError("--entropy-model is required unless --model is a model directory");
  std::optional<std::string> intra_path;
  if (!intra.empty()) intra_path = intra;
  return CodecBundle::from_files(flow, ent, intra_path, g);
}

inline void save_models(const FittedModels& m, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  const fs::path d(dir);
  write_file((d / "flow.sgflow").string(), serialize_flow(m.flow));
  write_file((d / "entropy.sgent").string(), serialize_entropy(m.entropy));
  if (m.intra) write_file((d / "intra.sgent").string(), serialize_entropy(*m.intra));
  write_text((d / "trace.csv").string(), m.trace.csv());
  if (m.intra) write_text((d / "intra_trace.csv").string(), m.intra_trace.csv());
}

inline void print_train_summary(std::ostream& out, const TrainTrace& trace) {
  if (trace.rows.empty()) return;
  const auto& first = trace.rows.front().terms;
  const auto& last = trace.rows.back().terms;
  out << "steps=" << trace.rows.size() << " initial_loss=" << first.loss << " final_loss=" << last.loss
      << " final_rate_bits=" << last.rate_bits << " final_distortion=" << last.distortion << "\n";
}

}  // namespace detail

inline int dispatch(const std::string& cmd, const Options& o, std::ostream& out, std::ostream& err) {
  using namespace detail;
  if (cmd == "synth") {
    SynthSpec spec = o.mixture > 1 ? SynthSpec::random_mixture(o.layers, o.channels, o.mixture, 0)
                                   : SynthSpec::standard(o.layers, o.channels);
    TrainConfig seeded;
    seeded.apply_env();
    spec.seed = o.seed.value_or(seeded.seed);
    spec.rho = o.rho;
    spec.frames = o.frames;
    const auto seq = o.intra_set ? LatentSequence(gen_intra_set(o.frames, spec)) : gen_video(spec);
    write_latents(seq, o.out);
    out << "frames=" << seq.size() << " layers=" << seq.layers() << " channels=" << seq.channels() << "\n";
    return kOk;
  }
  if (cmd == "verify-lemma1") {
    TrainConfig seeded;
    seeded.apply_env();
    const auto seed = o.seed.value_or(seeded.seed);
    const double ks = verify_residual_law(o.g, o.samples, seed);
    const double threshold = 0.005;
    out << "g=" << o.g << " n=" << IrwinHallSpec::for_gap(o.g).n << " samples=" << o.samples << " ks=" << ks
        << " threshold=" << threshold << (ks < threshold ? " pass" : " fail") << "\n";
    if (!(ks < threshold)) throw VerificationFailed("KS statistic " + std::to_string(ks) + " >= " + std::to_string(threshold));
    return kOk;
  }
  if (cmd == "train-intra" || cmd == "train-inter") {
    auto cfg = train_config(o);
    const auto data = read_latents(o.input);
    const auto layout = layout_for(o, data.layers());
    const std::vector<LatentSequence> set{data};
    const auto fitted = cmd == "train-intra"
                            ? fit_intra(set, layout, flow_config(o), cfg)
                            : fit_inter(set, layout, flow_config(o), cfg, o.intra_steps ? o.intra_steps : cfg.steps);
    save_models(fitted, o.out);
    print_train_summary(out, fitted.trace);
    return kOk;
  }
  if (cmd == "encode-intra" || cmd == "encode-inter") {
    const auto data = read_latents(o.input);
    const auto bundle = load_bundle(o, o.g);
    const auto enc = cmd == "encode-intra" ? encode_intra(data, bundle) : encode_inter(data, bundle, o.refresh);
    for (const auto& w : enc.stats.warnings) err << "warning: " << w << "\n";
    write_file(o.out, enc.container);
    out << "frames=" << data.size() << " bytes=" << enc.container.size() << " bpp=" << bpp(enc.container) << "\n";
    return kOk;
  }
  if (cmd == "decode") {
    const auto bytes = read_file(o.input);
    // g comes from the container; peek at it so the bundle matches
    ByteReader r(bytes);
    const auto h = ContainerHeader::read(r);
    const auto bundle = load_bundle(o, h.g == 0 ? kDefaultGap : h.g);
    const auto dec = decode(bytes, bundle, DecodeOptions{o.allow_truncated});
    if (dec.frames.empty()) throw FormatError("container holds no complete frame", bytes.size());
    write_latents(LatentSequence(dec.frames), o.out);
    if (dec.truncated) err << "warning: container truncated after " << dec.frames.size() << " frames\n";
    out << "frames=" << dec.frames.size() << "\n";
    return kOk;
  }
  if (cmd == "eval") {
    const auto data = read_latents(o.input);
    const auto bundle = load_bundle(o, o.g);
    const std::vector<LatentSequence> set{data};
    const auto p = evaluate(set, bundle, o.inter, o.refresh);
    out << "mode,frames,bpp,latent_mse,bits_per_frame\n"
        << (o.inter ? (o.refresh ? "inter-refresh" : "inter") : "intra") << "," << p.frames << "," << p.bpp << ","
        << p.latent_mse << "," << p.bits_per_frame << "\n";
    return kOk;
  }
  if (cmd == "rd-curve") {
    const auto lambdas = parse_lambdas(o.lambdas);
    const auto base = train_config(o);
    const auto data = read_latents(o.input);
    const std::vector<LatentSequence> train_set{data};
    const std::vector<LatentSequence> eval_set{o.eval_input.empty() ? data : read_latents(o.eval_input)};
    const auto layout = layout_for(o, data.layers());
    std::ostringstream csv;
    csv.precision(10);
    csv << "lambda,bpp,latent_mse\n";
    for (double lambda : lambdas) {
      auto cfg = base;
      cfg.lambda = lambda;
      const auto fitted = fit_intra(train_set, layout, flow_config(o), cfg);
      const auto p = evaluate(eval_set, fitted.bundle(o.g), false);
      csv << lambda << "," << p.bpp << "," << p.latent_mse << "\n";
      err << "lambda=" << lambda << " bpp=" << p.bpp << " latent_mse=" << p.latent_mse << "\n";
    }
    write_text(o.out, csv.str());
    out << csv.str();
    return kOk;
  }
  throw ConfigError("unknown command " + cmd);
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Latent-space learned compression: train, encode, decode, evaluate."};
  app.require_subcommand(1);
  Options o;

  auto seed = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "Random seed (overrides SGANC_SEED and --config)");
  };
  auto shape = [&](CLI::App* c) {
    c->add_option("--stages", o.stages, "Stage split, e.g. 0:2,2:3,3:4 (default: scaled 8/5/5 split)");
    c->add_option("--coupling-layers", o.coupling_layers, "Affine coupling layers per stage");
    c->add_option("--hidden", o.hidden, "Hidden width of coupling networks (0 = input width)");
    c->add_flag("--flattened", o.flattened, "One flow over the flattened stage instead of per-row sharing");
  };
  auto training = [&](CLI::App* c) {
    c->add_option("--config", o.config, "key=value training config file");
    c->add_option("--lambda", o.lambda, "Rate-distortion trade-off");
    c->add_option("--steps", o.steps, "Training steps");
    seed(c);
    shape(c);
  };
  auto models = [&](CLI::App* c) {
    c->add_option("--model", o.model, "Flow file (.sgflow) or training output directory")->required();
    c->add_option("--entropy-model", o.entropy_model, "Entropy model file (.sgent)");
    c->add_option("--intra-model", o.intra_model, "Entropy model for intra frames of inter containers");
  };

  auto* synth = app.add_subcommand("synth", "Generate synthetic latents (.sglat)");
  synth->add_option("--out", o.out, "Output .sglat path")->required();
  synth->add_option("--frames", o.frames, "Frame count")->check(CLI::PositiveNumber);
  synth->add_option("--rho", o.rho, "AR(1) correlation in [0,1)");
  synth->add_option("--layers", o.layers, "Latent layers")->check(CLI::PositiveNumber);
  synth->add_option("--channels", o.channels, "Latent channels")->check(CLI::PositiveNumber);
  synth->add_flag("--intra-set", o.intra_set, "i.i.d. mixture codes instead of a video");
  synth->add_option("--mixture", o.mixture, "Mixture components for --intra-set")->check(CLI::PositiveNumber);
  seed(synth);

  for (const char* name : {"train-intra", "train-inter"}) {
    auto* c = app.add_subcommand(name, std::string(name) == "train-intra" ? "Train flow and intra entropy model"
                                                                         : "Train flow and difference entropy model");
    c->add_option("input", o.input, "Training latents (.sglat)")->required();
    c->add_option("--out", o.out, "Output directory")->required();
    training(c);
    if (std::string(name) == "train-inter")
      c->add_option("--intra-steps", o.intra_steps, "Steps for the intra-frame model (default: --steps)");
  }

  for (const char* name : {"encode-intra", "encode-inter"}) {
    auto* c = app.add_subcommand(name, std::string(name) == "encode-intra" ? "Encode every frame independently"
                                                                          : "Encode a video with inter coding");
    c->add_option("input", o.input, "Latents (.sglat)")->required();
    c->add_option("--out", o.out, "Output container (.sgvc)")->required();
    models(c);
    if (std::string(name) == "encode-inter") {
      c->add_option("--g", o.g, "Residual or refresh gap")->check(CLI::Range(1u, kMaxGap));
      c->add_flag("--refresh", o.refresh, "Intra refresh every g frames instead of residuals");
    }
  }

  auto* dec = app.add_subcommand("decode", "Decode a container back to latents");
  dec->add_option("input", o.input, "Container (.sgvc)")->required();
  dec->add_option("--out", o.out, "Output .sglat path")->required();
  dec->add_flag("--allow-truncated", o.allow_truncated, "Keep the complete frames of a cut container");
  models(dec);

  auto* ev = app.add_subcommand("eval", "Encode, decode and report rate and latent MSE");
  ev->add_option("input", o.input, "Latents (.sglat)")->required();
  ev->add_flag("--inter", o.inter, "Inter coding");
  ev->add_flag("--refresh", o.refresh, "Intra refresh instead of residuals");
  ev->add_option("--g", o.g, "Residual or refresh gap")->check(CLI::Range(1u, kMaxGap));
  models(ev);

  auto* rd = app.add_subcommand("rd-curve", "Train one intra model per lambda and write lambda,bpp,latent_mse");
  rd->add_option("input", o.input, "Training latents (.sglat)")->required();
  rd->add_option("--eval", o.eval_input, "Evaluation latents (default: the training set)");
  rd->add_option("--lambdas", o.lambdas, "Comma-separated lambdas");
  rd->add_option("--out", o.out, "Output CSV")->required();
  rd->add_option("--g", o.g, "Gap stored in the bundle")->check(CLI::Range(1u, kMaxGap));
  training(rd);

  auto* lemma = app.add_subcommand("verify-lemma1", "Monte Carlo check of the residual law");
  lemma->add_option("--g", o.g, "Residual gap")->check(CLI::Range(1u, kMaxGap));
  lemma->add_option("--samples", o.samples, "Trajectories")->check(CLI::PositiveNumber);
  seed(lemma);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return detail::fail(err, "usage", kUsage, e.what());
  }

  const auto* sub = app.get_subcommands().front();
  try {
    return dispatch(sub->get_name(), o, out, err);
  } catch (const DigestMismatch& e) {
    return detail::fail(err, "digest", kDigest, e.what());
  } catch (const IoError& e) {
    return detail::fail(err, "io", kIo, e.what());
  } catch (const FormatError& e) {
    return detail::fail(err, "format", kFormat, e.what());
  } catch (const DecodeError& e) {
    return detail::fail(err, "format", kFormat, e.what());
  } catch (const NumericError& e) {
    return detail::fail(err, "numeric", kNumeric, e.what());
  } catch (const VerificationFailed& e) {
    return detail::fail(err, "verification", kVerification, e.what());
  } catch (const ConfigError& e) {
    return detail::fail(err, "usage", kUsage, e.what());
  } catch (const LayoutError& e) {
    return detail::fail(err, "usage", kUsage, e.what());
  } catch (const std::exception& e) {
    return detail::fail(err, "internal", kOther, e.what());
  }
}

}  // namespace sganc::cli
