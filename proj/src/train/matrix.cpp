#include "emag/errors.hpp"
#include "emag/train.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>

namespace emag::train {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

}  // namespace

std::string digest(const nlohmann::json& j) {
  const std::string text = j.dump();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::vector<std::string> variant_names() {
  return {"cvm", "kf", "seq2seq", "emag", "no-objects", "no-rgb", "no-flow", "no-ego", "rgb-only", "no-ego-loss",
          "bgflow"};
}

Variant make_variant(const std::string& name, const model::ModelConfig& base, const model::Seq2SeqConfig& seq_base) {
  Variant v;
  v.name = name;
  v.model = base;
  v.seq2seq = seq_base;
  if (name == "cvm" || name == "kf" || name == "seq2seq") {
    v.method = method_from_string(name);
  } else if (name == "emag") {
  } else if (name == "no-objects") {
    v.model.use_objects = false;
  } else if (name == "no-rgb") {
    v.model.use_rgb = false;
  } else if (name == "no-flow") {
    v.model.use_flow = false;
  } else if (name == "no-ego") {
    v.model.use_ego = false;
    v.alpha = 0.0;
  } else if (name == "rgb-only") {
    v.model.use_objects = v.model.use_flow = v.model.use_ego = false;
    v.model.use_rgb = true;
    v.alpha = 0.0;
  } else if (name == "no-ego-loss") {
    v.alpha = 0.0;
  } else if (name == "bgflow") {
    v.model.ego_representation = data::EgoRepresentation::kBackgroundFlow;
  } else {
    std::string known;
    for (const auto& n : variant_names()) known += (known.empty() ? "" : ", ") + n;
    throw ValidationError("unknown method '" + name + "' (known: " + known + ")");
  }
  return v;
}

bool ExperimentReport::any_failure() const {
  return std::any_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.error.has_value(); });
}

void to_json(nlohmann::json& j, const ReportRow& r) {
  j = r.record;
  j["checkpoint"] = r.checkpoint;
  j["checkpoint_kind"] = r.checkpoint_kind;
  j["config_digest"] = r.config_digest;
  j["error"] = r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr);
}

void to_json(nlohmann::json& j, const ExperimentReport& r) {
  j = {{"methods", r.methods}, {"domains", r.domains}, {"rows", r.rows}};
}

ExperimentReport run_matrix(const MatrixConfig& config, const std::vector<DomainSplits>& domains) {
  if (domains.empty()) throw ValidationError("run_matrix: no domains");
  if (config.methods.empty()) throw ValidationError("run_matrix: no methods");
  if (config.seeds.empty()) throw ValidationError("run_matrix: no seeds");
  std::vector<Variant> variants;
  for (const auto& name : config.methods) variants.push_back(make_variant(name, config.model, config.seq2seq));

  ExperimentReport report;
  report.methods = config.methods;
  for (const auto& d : domains) report.domains.push_back(d.name);

  for (const auto& v : variants) {
    for (const auto& train_domain : domains) {
      for (const std::uint64_t seed : config.seeds) {
        TrainConfig tc = config.train;
        tc.seed = seed;
        if (v.alpha) tc.alpha = *v.alpha;
        nlohmann::json cell_config = {{"method", v.name}, {"seed", seed}};
        if (is_learned(v.method)) {
          cell_config["train"] = tc;
          if (v.method == Method::kEmag) {
            auto mc = v.model;
            mc.init_seed = seed;
            cell_config["model"] = mc;
          } else {
            auto sc = v.seq2seq;
            sc.init_seed = seed;
            cell_config["model"] = sc;
          }
        }
        const std::string config_digest = digest(cell_config);

        std::optional<model::Checkpoint> ckpt;
        std::string ckpt_path, ckpt_kind;
        std::optional<std::string> train_error;
        if (is_learned(v.method)) {
          ckpt_kind = config.use_best_checkpoint ? "best" : "final";
          try {
            FitOptions opts;
            if (!config.checkpoint_dir.empty()) {
              opts.out_dir = config.checkpoint_dir / v.name / train_domain.name / seed_dir(seed);
              ckpt_path = (*opts.out_dir / (ckpt_kind + ".json")).string();
            }
            FitResult fr;
            if (v.method == Method::kEmag) {
              auto mc = v.model;
              mc.init_seed = seed;
              model::EmagModel m(mc);
              fr = fit(*make_learner(m), train_domain.train, train_domain.val, tc, opts);
            } else {
              auto sc = v.seq2seq;
              sc.init_seed = seed;
              model::Seq2SeqModel m(sc);
              fr = fit(*make_learner(m), train_domain.train, train_domain.val, tc, opts);
            }
            ckpt = config.use_best_checkpoint ? fr.best_checkpoint : fr.final_checkpoint;
          } catch (const std::exception& e) {
            train_error = std::string("training failed: ") + e.what();
          }
        }

        for (const auto& eval_domain : domains) {
          ReportRow row;
          row.record.method = v.name;
          row.record.train_domain = train_domain.name;
          row.record.eval_domain = eval_domain.name;
          row.record.seed = seed;
          row.checkpoint = ckpt_path;
          row.checkpoint_kind = ckpt_kind;
          row.config_digest = config_digest;
          if (train_error) {
            row.error = train_error;
          } else {
            try {
              const auto r = evaluate(v.method, ckpt ? &*ckpt : nullptr, eval_domain.val);
              row.record.ade = r.ade;
              row.record.fde = r.fde;
              row.record.n_samples = r.n_samples;
            } catch (const std::exception& e) {
              row.error = std::string("evaluation failed: ") + e.what();
            }
          }
          report.rows.push_back(std::move(row));
        }
      }
    }
  }
  // Method, train domain, eval domain, seed.
  std::stable_sort(report.rows.begin(), report.rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    auto rank = [&](const ReportRow& r) {
      const auto m = std::find(report.methods.begin(), report.methods.end(), r.record.method) - report.methods.begin();
      const auto t =
          std::find(report.domains.begin(), report.domains.end(), r.record.train_domain) - report.domains.begin();
      const auto e =
          std::find(report.domains.begin(), report.domains.end(), r.record.eval_domain) - report.domains.begin();
      return std::tuple(m, t, e, r.record.seed);
    };
    return rank(a) < rank(b);
  });
  return report;
}

std::vector<CellSummary> summarize(const ExperimentReport& report) {
  std::vector<CellSummary> out;
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>>
      cells;
  std::vector<std::tuple<std::string, std::string, std::string>> order;
  for (const auto& r : report.rows) {
    if (r.error) continue;
    const auto key = std::tuple(r.record.method, r.record.train_domain, r.record.eval_domain);
    if (!cells.contains(key)) order.push_back(key);
    cells[key].first.push_back(r.record.ade);
    cells[key].second.push_back(r.record.fde);
  }
  for (const auto& key : order) {
    const auto& [ades, fdes] = cells.at(key);
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), median(ades), median(fdes), ades.size()});
  }
  return out;
}

std::vector<DropSummary> performance_drop(const ExperimentReport& report) {
  const auto cells = summarize(report);
  std::vector<DropSummary> out;
  for (const auto& method : report.methods) {
    double intra = 0, cross = 0;
    int n_intra = 0, n_cross = 0;
    for (const auto& c : cells) {
      if (c.method != method) continue;
      if (c.train_domain == c.eval_domain) {
        intra += c.ade;
        ++n_intra;
      } else {
        cross += c.ade;
        ++n_cross;
      }
    }
    if (n_intra == 0 || n_cross == 0) continue;
    DropSummary d;
    d.method = method;
    d.intra_ade = intra / n_intra;
    d.cross_ade = cross / n_cross;
    d.drop_percent = 100.0 * (d.cross_ade - d.intra_ade) / d.intra_ade;
    out.push_back(d);
  }
  return out;
}

std::string render_table(const ExperimentReport& report) {
  const auto cells = summarize(report);
  auto find = [&](const std::string& m, const std::string& t, const std::string& e) -> const CellSummary* {
    for (const auto& c : cells)
      if (c.method == m && c.train_domain == t && c.eval_domain == e) return &c;
    return nullptr;
  };
  // Best (lowest) ADE and FDE per (train domain, eval domain) column.
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> best;
  for (const auto& c : cells) {
    const auto key = std::pair(c.train_domain, c.eval_domain);
    auto it = best.find(key);
    if (it == best.end()) {
      best[key] = {c.ade, c.fde};
    } else {
      it->second.first = std::min(it->second.first, c.ade);
      it->second.second = std::min(it->second.second, c.fde);
    }
  }
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = {"method", "train"};
  for (const auto& e : report.domains) {
    header.push_back(e + " ADE");
    header.push_back(e + " FDE");
  }
  grid.push_back(header);
  for (const auto& m : report.methods) {
    for (const auto& t : report.domains) {
      std::vector<std::string> line = {m, t};
      for (const auto& e : report.domains) {
        const auto* c = find(m, t, e);
        if (!c) {
          line.push_back("-");
          line.push_back("-");
          continue;
        }
        const auto& b = best.at({t, e});
        line.push_back(fixed(c->ade) + (c->ade == b.first ? "*" : ""));
        line.push_back(fixed(c->fde) + (c->fde == b.second ? "*" : ""));
      }
      grid.push_back(line);
    }
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      if (i > 0) out << "  ";
      if (i < 2) {
        out << std::left << std::setw(static_cast<int>(width[i])) << grid[r][i];
      } else {
        out << std::right << std::setw(static_cast<int>(width[i])) << grid[r][i];
      }
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << "\n";
    }
  }
  out << "Median over seeds, pixels at 256 px image height; * marks the best value per column.\n";
  for (const auto& r : report.rows) {
    if (r.error) {
      out << "FAILED " << r.record.method << " " << r.record.train_domain << "->" << r.record.eval_domain << " seed "
          << r.record.seed << ": " << *r.error << "\n";
    }
  }
  return out.str();
}

std::string render_drop_summary(const std::vector<DropSummary>& drops) {
  std::ostringstream out;
  std::size_t w = 6;
  for (const auto& d : drops) w = std::max(w, d.method.size());
  out << std::left << std::setw(static_cast<int>(w)) << "method" << "  " << std::right << std::setw(9) << "intra ADE"
      << "  " << std::setw(9) << "cross ADE" << "  " << std::setw(7) << "drop %" << "\n";
  for (const auto& d : drops) {
    out << std::left << std::setw(static_cast<int>(w)) << d.method << "  " << std::right << std::setw(9)
        << fixed(d.intra_ade) << "  " << std::setw(9) << fixed(d.cross_ade) << "  " << std::setw(7)
        << fixed(d.drop_percent, 1) << "\n";
  }
  return out.str();
}

std::string drop_summary_svg(const std::vector<DropSummary>& drops) {
  const int bar = 40, gap = 20, left = 60, top = 30, height = 200;
  const int width = left + static_cast<int>(drops.size()) * (bar + gap) + gap;
  double hi = 1.0, lo = 0.0;
  for (const auto& d : drops) {
    hi = std::max(hi, d.drop_percent);
    lo = std::min(lo, d.drop_percent);
  }
  const double range = hi - lo;
  auto y_of = [&](double v) { return top + height * (hi - v) / range; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 60
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << left << "\" y=\"16\">Cross-domain ADE drop (%)</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << fixed(y_of(0), 1) << "\" x2=\"" << width << "\" y2=\""
    << fixed(y_of(0), 1) << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < drops.size(); ++i) {
    const auto& d = drops[i];
    const double x = left + gap + static_cast<double>(i) * (bar + gap);
    const double y0 = y_of(std::max(0.0, d.drop_percent)), y1 = y_of(std::min(0.0, d.drop_percent));
    s << "<rect x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y0, 1) << "\" width=\"" << bar << "\" height=\""
      << fixed(y1 - y0, 1) << "\" fill=\"#4a7ab5\"/>\n";
    s << "<text x=\"" << fixed(x, 1) << "\" y=\"" << fixed(y0 - 4, 1) << "\">" << fixed(d.drop_percent, 1)
      << "</text>\n";
    s << "<text x=\"" << fixed(x, 1) << "\" y=\"" << top + height + 20 << "\">" << d.method << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string loss_curve_svg(const std::vector<EpochLog>& log) {
  const int w = 480, h = 240, pad = 40;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<text x=\"" << pad << "\" y=\"16\">Training loss per epoch</text>\n";
  if (!log.empty()) {
    double hi = log.front().train_loss, lo = hi;
    for (const auto& e : log) {
      hi = std::max(hi, e.train_loss);
      lo = std::min(lo, e.train_loss);
    }
    if (hi == lo) hi = lo + 1;
    const double n = std::max<double>(1, static_cast<double>(log.size()) - 1);
    s << "<polyline fill=\"none\" stroke=\"#4a7ab5\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < log.size(); ++i) {
      const double x = pad + (w - 2 * pad) * static_cast<double>(i) / n;
      const double y = pad + (h - 2 * pad) * (hi - log[i].train_loss) / (hi - lo);
      s << (i ? " " : "") << fixed(x, 1) << "," << fixed(y, 1);
    }
    s << "\"/>\n";
    s << "<text x=\"4\" y=\"" << pad << "\">" << fixed(hi, 3) << "</text>\n";
    s << "<text x=\"4\" y=\"" << h - pad << "\">" << fixed(lo, 3) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace emag::train
