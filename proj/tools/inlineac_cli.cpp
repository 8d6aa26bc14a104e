// inlineac: command-line front end for the corpus, model, theory, agent,
// evaluation and study tooling.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "inlineac/agents.hpp"
#include "inlineac/corpus.hpp"
#include "inlineac/errors.hpp"
#include "inlineac/eval.hpp"
#include "inlineac/lm.hpp"
#include "inlineac/mdp.hpp"
#include "inlineac/study_server.hpp"
#include "inlineac/studysvc.hpp"
#include "inlineac/theory.hpp"

namespace {

using namespace inlineac;
using nlohmann::json;

struct EnvOptions {
  std::string preset = "default";
  std::string config;
  std::size_t k = 1;
  bool multiword = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Reward preset: default or study");
    cmd->add_option("--config", config, "Environment JSON (overrides --preset)");
    cmd->add_option("--k", k, "Candidates per state");
    cmd->add_flag("--multiword", multiword, "Mix 2-word candidates into the slate");
  }

  mdp::EnvConfig build() const {
    mdp::EnvConfig cfg;
    if (!config.empty()) return mdp::EnvConfig::load(config);
    cfg.reward = mdp::RewardParams::preset(preset);
    cfg.lm.k = k;
    cfg.lm.multiword = multiword;
    cfg.lm.validate();
    return cfg;
  }
};

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::vector<std::string> split_policies(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_table(const theory::TwoWordTable& t) {
  std::cout << "gamma=" << t.gamma << "\n  t   Q_show(u)     Q_wait(u)     Q_show(v)     Q_wait(v)\n";
  std::cout << std::fixed << std::setprecision(6);
  for (int i = 0; i <= t.n; ++i) {
    const auto& u = t.u[static_cast<std::size_t>(i)];
    const auto& v = t.v[static_cast<std::size_t>(i)];
    std::cout << std::setw(3) << i << "  " << std::setw(12) << u.show << "  " << std::setw(12) << u.wait << "  "
              << std::setw(12) << v.show << "  " << std::setw(12) << v.wait << (t.shows_at(i) ? "  show" : "  wait")
              << '\n';
  }
  std::cout.unsetf(std::ios::fixed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inline autocomplete as a Markov decision process"};
  app.require_subcommand(1);

  // filter-corpus
  std::string fc_in, fc_out, fc_summary;
  corpus::FilterConfig fc_cfg;
  auto* fc = app.add_subcommand("filter-corpus", "Normalize and filter a one-sentence-per-line corpus");
  fc->add_option("--in", fc_in)->required();
  fc->add_option("--out", fc_out)->required();
  fc->add_option("--max-words", fc_cfg.max_words);
  fc->add_option("--summary", fc_summary, "Also write the JSON summary here");

  // build-lm
  std::string bl_in, bl_out;
  auto* bl = app.add_subcommand("build-lm", "Build the bigram model from a filtered corpus");
  bl->add_option("--in", bl_in)->required();
  bl->add_option("--out", bl_out)->required();

  // suggest
  std::string sg_model, sg_context;
  lm::LmConfig sg_cfg;
  auto* sg = app.add_subcommand("suggest", "Print candidates for a typed context as JSON");
  sg->add_option("--model", sg_model)->required();
  sg->add_option("--context", sg_context)->required();
  sg->add_option("--k", sg_cfg.k);
  sg->add_option("--lambda", sg_cfg.lambda);
  sg->add_flag("--multiword", sg_cfg.multiword);

  // two-word
  theory::TwoWordInstance tw;
  tw.n = 4;
  tw.m = 2;
  tw.alpha = 0.4;
  tw.beta = 60.0 / 521.0;
  auto* twc = app.add_subcommand("two-word", "Q tables of the two-word instance");
  twc->add_option("--n", tw.n);
  twc->add_option("--m", tw.m);
  twc->add_option("--alpha", tw.alpha);
  twc->add_option("--beta", tw.beta);

  // disagree-sweep
  std::string ds_words, ds_model, ds_alphas;
  std::size_t ds_top = 500;
  double ds_beta = 60.0 / 521.0;
  auto* ds = app.add_subcommand("disagree-sweep", "Myopic/farsighted disagreement fraction against alpha (CSV)");
  auto* ds_words_opt = ds->add_option("--words", ds_words, "Word list: 'word [weight]' per line");
  ds->add_option("--model", ds_model, "Take the most frequent words from this model")->excludes(ds_words_opt);
  ds->add_option("--top", ds_top);
  ds->add_option("--beta", ds_beta);
  ds->add_option("--alphas", ds_alphas, "Comma-separated; default 0.05..0.95");

  // train-q
  std::string tq_mode = "online", tq_model, tq_corpus, tq_out, tq_dataset, tq_curve;
  agents::TrainConfig tq_cfg;
  EnvOptions tq_env;
  double tq_tau = 0.3, tq_eps = 0.05;
  std::size_t tq_n = 5000;
  auto* tq = app.add_subcommand("train-q", "Train a tabular Q agent online or from an offline dataset");
  tq->add_option("--mode", tq_mode)->check(CLI::IsMember({"online", "offline"}));
  tq->add_option("--model", tq_model)->required();
  tq->add_option("--corpus", tq_corpus, "Training sentences (online, or offline without --dataset)");
  tq->add_option("--dataset", tq_dataset, "Offline dataset JSONL");
  tq->add_option("--gamma", tq_cfg.gamma);
  tq->add_option("--steps", tq_cfg.steps);
  tq->add_option("--lr", tq_cfg.learning_rate);
  tq->add_option("--seed", tq_cfg.seed);
  tq->add_option("--tau", tq_tau, "Offline collection threshold when no dataset is given");
  tq->add_option("--eps", tq_eps);
  tq->add_option("--n", tq_n);
  tq->add_option("--curve", tq_curve, "Write the learning curve CSV here");
  tq->add_flag("--exact-context", tq_cfg.features.exact_context, "Key Q entries on the exact typed text");
  tq->add_option("--out", tq_out)->required();
  tq_env.add(tq);

  // collect-offline
  std::string co_model, co_corpus, co_out;
  double co_tau = 0.3, co_eps = 0.05;
  std::size_t co_n = 5000;
  std::uint64_t co_seed = 0;
  EnvOptions co_env;
  auto* co = app.add_subcommand("collect-offline", "Collect a static dataset from an exploring threshold policy");
  co->add_option("--model", co_model)->required();
  co->add_option("--corpus", co_corpus)->required();
  co->add_option("--tau", co_tau);
  co->add_option("--eps", co_eps);
  co->add_option("--n", co_n);
  co->add_option("--seed", co_seed);
  co->add_option("--out", co_out)->required();
  co_env.add(co);

  // run-eval
  std::string re_model, re_corpus, re_policies = "oracle,random,threshold:0.3", re_csv, re_json;
  std::size_t re_runs = 5, re_per_run = 0;
  std::uint64_t re_seed = 0;
  EnvOptions re_env;
  auto* re = app.add_subcommand("run-eval", "Evaluate policies over repeated runs");
  re->add_option("--model", re_model)->required();
  re->add_option("--corpus", re_corpus)->required();
  re->add_option("--policies", re_policies);
  re->add_option("--runs", re_runs);
  re->add_option("--sentences-per-run", re_per_run);
  re->add_option("--seed", re_seed);
  re->add_option("--csv", re_csv, "Write metrics CSV here (default stdout)");
  re->add_option("--json", re_json, "Write the JSON bundle here");
  re_env.add(re);

  // serve
  std::string sv_model, sv_policy = "threshold:0", sv_logs = "study_logs", sv_prompts, sv_host = "0.0.0.0";
  int sv_port = 8080;
  EnvOptions sv_env;
  sv_env.preset = "study";
  auto* sv = app.add_subcommand("serve", "Run the typing-study HTTP service");
  sv->add_option("--model", sv_model)->required();
  sv->add_option("--policy", sv_policy);
  sv->add_option("--port", sv_port);
  sv->add_option("--host", sv_host);
  sv->add_option("--logs", sv_logs);
  sv->add_option("--prompts", sv_prompts, "Prompt pool for sessions created without prompts");
  sv_env.add(sv);

  // analyze-study
  std::string as_logs, as_out;
  std::size_t as_bin = 10;
  auto* as = app.add_subcommand("analyze-study", "Load estimate and fatigue curves from study logs (CSV)");
  as->add_option("--logs", as_logs)->required();
  as->add_option("--bin-width", as_bin);
  as->add_option("--out", as_out, "File prefix: writes <out>_load.csv and <out>_fatigue.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fc->parsed()) {
      const auto lines = corpus::read_lines(fc_in);
      const auto res = corpus::filter_corpus(lines, fc_cfg);
      std::vector<std::string> kept;
      for (const auto& r : res.kept) kept.push_back(r.text);
      corpus::write_lines(fc_out, kept);
      const json summary = {{"input_count", res.input_count},
                            {"kept_count", res.kept.size()},
                            {"drop_reasons",
                             {{"too_long", res.drops.too_long}, {"bad_char", res.drops.bad_char}, {"oov", res.drops.oov}}}};
      std::cout << summary.dump(2) << '\n';
      if (!fc_summary.empty()) std::ofstream(fc_summary) << summary.dump(2) << '\n';
    } else if (bl->parsed()) {
      const auto sentences = corpus::load_sentences(bl_in);
      const auto model = lm::LanguageModel::build(sentences);
      model.save(bl_out);
      std::cout << json{{"sentences", sentences.size()},
                        {"vocabulary", model.vocabulary().size()},
                        {"bigrams", model.bigrams().entry_count()},
                        {"hash", eval::git_blob_sha1(model.serialize())}}
                       .dump(2)
                << '\n';
    } else if (sg->parsed()) {
      sg_cfg.validate();
      const auto model = lm::LanguageModel::load(sg_model);
      json out = json::array();
      for (const auto& c : model.candidates(sg_context, sg_cfg)) {
        out.push_back({{"completion", c.completion},
                       {"full_words", c.full_words},
                       {"raw_prob", c.raw_prob},
                       {"norm_prob", c.norm_prob}});
      }
      std::cout << out.dump(2) << '\n';
    } else if (twc->parsed()) {
      tw.validate();
      const auto my = theory::q_myopic_at_m(tw);
      const auto far = theory::q_farsighted_at_m(tw);
      std::cout << "n=" << tw.n << " m=" << tw.m << " alpha=" << tw.alpha << " beta=" << tw.beta << '\n';
      std::cout << "closed form at m, gamma=0: show=" << my.show << " wait=" << my.wait << '\n';
      std::cout << "closed form at m, gamma=1: show=" << far.q.show << " wait=" << far.q.wait
                << (far.valid ? "" : " (outside validity regime)") << '\n';
      const auto iv = theory::disagreement_interval(tw.n, tw.m, tw.beta);
      std::cout << "disagreement interval: (" << iv.alpha_lo << ", " << iv.alpha_hi << ")"
                << (iv.empty() ? " empty" : "") << '\n';
      print_table(theory::brute_force_two_word(tw, 0.0));
      print_table(theory::brute_force_two_word(tw, 1.0));
    } else if (ds->parsed()) {
      std::vector<std::pair<std::string, double>> words;
      if (!ds_model.empty()) {
        words = theory::top_words(lm::LanguageModel::load(ds_model), ds_top);
      } else if (!ds_words.empty()) {
        for (const auto& line : corpus::read_lines(ds_words)) {
          std::istringstream is(line);
          std::string w;
          double weight = 1.0;
          if (!(is >> w)) continue;
          is >> weight;
          words.emplace_back(w, weight);
        }
      } else {
        throw ConfigError("disagree-sweep needs --words or --model");
      }
      const auto alphas = ds_alphas.empty() ? theory::default_alpha_grid() : parse_list(ds_alphas);
      const auto base = theory::TrieMdp::top_prior_words(words, mdp::RewardParams::defaults(), 1.0);
      std::cout << "alpha,states,disagreements,fraction\n";
      for (const auto& p : theory::alpha_sweep(base, alphas, ds_beta)) {
        std::cout << p.alpha << ',' << p.report.total_states << ',' << p.report.disagreements << ','
                  << p.report.fraction << '\n';
      }
    } else if (tq->parsed()) {
      const auto model = lm::LanguageModel::load(tq_model);
      const mdp::Environment env(model, tq_env.build());
      agents::QTable table;
      if (tq_mode == "online") {
        if (tq_corpus.empty()) throw ConfigError("online training needs --corpus");
        const auto sentences = corpus::load_sentences(tq_corpus);
        auto res = agents::q_learning_train(env, sentences, tq_cfg);
        if (!tq_curve.empty()) {
          std::ofstream os(tq_curve);
          os << "step,epsilon,mean_return,episodes\n";
          for (const auto& p : res.curve) os << p.step << ',' << p.epsilon << ',' << p.mean_return << ',' << p.episodes << '\n';
        }
        table = std::move(res.table);
      } else {
        agents::OfflineDataset data;
        if (!tq_dataset.empty()) {
          data = agents::OfflineDataset::load_jsonl(tq_dataset);
        } else {
          if (tq_corpus.empty()) throw ConfigError("offline training needs --dataset or --corpus");
          const auto sentences = corpus::load_sentences(tq_corpus);
          agents::ThresholdPolicy base(tq_tau);
          data = agents::collect_offline(base, tq_eps, tq_n, env, sentences, tq_cfg.seed, tq_cfg.features);
        }
        tq_cfg.features = data.features;
        table = agents::fitted_q_train(data, tq_cfg);
      }
      table.save(tq_out);
      std::cout << json{{"entries", table.cells().size()}, {"out", tq_out}}.dump() << '\n';
    } else if (co->parsed()) {
      const auto model = lm::LanguageModel::load(co_model);
      const mdp::Environment env(model, co_env.build());
      const auto sentences = corpus::load_sentences(co_corpus);
      agents::ThresholdPolicy base(co_tau);
      const auto data = agents::collect_offline(base, co_eps, co_n, env, sentences, co_seed);
      data.save_jsonl(co_out);
      std::cout << json{{"trajectories", data.trajectories},
                        {"transitions", data.transitions.size()},
                        {"explored_fraction", data.explored_fraction()}}
                       .dump()
                << '\n';
    } else if (re->parsed()) {
      const auto model = lm::LanguageModel::load(re_model);
      eval::EvalConfig cfg;
      cfg.env = re_env.build();
      cfg.runs = re_runs;
      cfg.seed_base = re_seed;
      cfg.sentences_per_run = re_per_run;
      cfg.sentences = corpus::load_sentences(re_corpus);
      std::vector<eval::NamedPolicy> policies;
      for (const auto& p : split_policies(re_policies)) {
        policies.push_back(eval::make_named_policy(agents::PolicySpec::parse(p), cfg.env.boundary));
      }
      const auto rows = eval::evaluate(model, policies, cfg);
      if (re_csv.empty()) {
        eval::write_metrics_csv(std::cout, rows);
      } else {
        std::ofstream os(re_csv);
        eval::write_metrics_csv(os, rows);
      }
      if (!re_json.empty()) {
        std::ifstream in(re_model, std::ios::binary);
        const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const json bundle = {{"config",
                              {{"env", cfg.env.to_json()},
                               {"runs", cfg.runs},
                               {"seed", cfg.seed_base},
                               {"sentences", cfg.sentences.size()},
                               {"sentences_per_run", cfg.sentences_per_run},
                               {"policies", split_policies(re_policies)}}},
                             {"lm_hash", eval::git_blob_sha1(bytes)},
                             {"rows", eval::metrics_json(rows)}};
        std::ofstream(re_json) << bundle.dump(2) << '\n';
      }
    } else if (sv->parsed()) {
      const auto model = lm::LanguageModel::load(sv_model);
      studysvc::ServiceConfig cfg;
      cfg.env = sv_env.build();
      cfg.default_policy = sv_policy;
      cfg.log_dir = sv_logs;
      studysvc::StudyService service(model, cfg);
      studysvc::ServerOptions opts;
      if (!sv_prompts.empty()) {
        for (const auto& r : corpus::load_sentences(sv_prompts)) opts.prompt_pool.push_back(r.text);
      }
      std::cerr << "listening on " << sv_host << ':' << sv_port << '\n';
      studysvc::serve(service, opts, sv_host, sv_port);
    } else if (as->parsed()) {
      const auto logs = studysvc::read_session_logs(as_logs);
      const auto pairing = studysvc::paired_samples(logs);
      const auto est = studysvc::estimate_load(pairing.samples);
      const auto curves = studysvc::fatigue_curve(logs, {as_bin});

      std::ostringstream load;
      load << "quantity,value,ci95,n\n";
      load << "alpha_hat," << est.alpha_hat << ',' << est.alpha_ci << ',' << est.n << '\n';
      load << "beta_hat," << est.beta_hat << ',' << est.beta_ci << ',' << est.n << '\n';
      load << "beta_hat_correct," << est.beta_hat_correct << ',' << est.beta_correct_ci << ',' << est.n_correct << '\n';
      load << "beta_hat_incorrect," << est.beta_hat_incorrect << ',' << est.beta_incorrect_ci << ',' << est.n_incorrect
           << '\n';
      load << "slope_ms," << est.slope_ms << ',' << est.slope_ci_ms << ',' << est.n << '\n';
      load << "mean_load_ms," << est.mean_load_ms << ',' << est.mean_load_ci_ms << ',' << est.n << '\n';

      std::ostringstream fat;
      fat << "curve,bin_lo,bin_hi,rate,ci95,n\n";
      auto rows = [&](const char* name, const std::vector<studysvc::FatigueBucket>& bs) {
        for (const auto& b : bs) fat << name << ',' << b.bin_lo << ',' << b.bin_hi << ',' << b.rate << ',' << b.ci95 << ',' << b.n << '\n';
      };
      rows("past_suggestions", curves.by_past_suggestions);
      rows("past_incorrect", curves.by_past_incorrect);

      if (as_out.empty()) {
        std::cout << load.str() << '\n' << fat.str();
      } else {
        std::ofstream(as_out + "_load.csv") << load.str();
        std::ofstream(as_out + "_fatigue.csv") << fat.str();
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
