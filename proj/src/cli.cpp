#include "neox/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "neox/checkpoint.hpp"
#include "neox/config.hpp"
#include "neox/corpus.hpp"
#include "neox/error.hpp"
#include "neox/eval.hpp"
#include "neox/infra.hpp"
#include "neox/kernels.hpp"
#include "neox/model.hpp"
#include "neox/tokenizer.hpp"
#include "neox/tokscope.hpp"
#include "neox/trainer.hpp"

namespace neox::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> load_docs(const std::vector<std::string>& inputs) {
  std::vector<std::string> docs;
  for (const auto& in : inputs) {
    auto d = fs::is_directory(in) ? read_document_dir(in) : read_documents(in);
    docs.insert(docs.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
  }
  return docs;
}

std::string read_stream(std::istream& in) {
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open " + path);
  return read_stream(in);
}

// Leftover `--key value` / `--key=value` arguments become config overrides.
config::Overrides overrides_from(const std::vector<std::string>& extra, const std::vector<std::string>& sets) {
  config::Overrides o;
  for (std::size_t i = 0; i < extra.size(); ++i) {
    const std::string& a = extra[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) throw CLI::ExtrasError({a});
    const std::string body = a.substr(2);
    if (const auto eq = body.find('='); eq != std::string::npos) {
      o.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extra.size()) throw CLI::ArgumentMismatch(a + " needs a value");
      o.emplace_back(body, extra[++i]);
    }
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + s);
    o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return o;
}

config::RunConfig load_run_config(const std::string& path, const config::Overrides& o, std::ostream& err) {
  config::RunConfig cfg = path.empty() ? config::parse_config_text("", o) : config::parse_config(path, o);
  if (const char* env = std::getenv("NEOXKIT_SEED"); env && *env) cfg.set("seed", env, config::Provenance::env);
  for (const auto& w : cfg.warnings()) err << "warning: " << w << '\n';
  return cfg;
}

std::vector<tok::TokenId> encode_docs(const tok::TokenizerModel& tk, const std::vector<std::string>& docs) {
  std::vector<tok::TokenId> ids;
  const bool has_eod = !tk.reserved_ids().empty();
  for (const auto& d : docs) {
    const auto e = tk.encode(d);
    ids.insert(ids.end(), e.begin(), e.end());
    if (has_eod) ids.push_back(tk.reserved_ids().front());
  }
  return ids;
}

std::vector<tok::TokenId> parse_ids(const std::string& text) {
  std::vector<tok::TokenId> ids;
  std::istringstream in(text);
  std::string t;
  while (in >> t) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(t, &pos);
      if (pos != t.size()) throw std::invalid_argument(t);
      if (v < 0 || v > 0x7fffffff) throw ValidationError("token id out of range: " + t);
      ids.push_back(static_cast<tok::TokenId>(v));
    } catch (const std::logic_error&) {
      throw ValidationError("not a token id: " + t);
    }
  }
  return ids;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tokenizer, transformer training and evaluation toolkit", "neoxkit"};
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--isa", isa, "force kernel variant (scalar|avx2)");

  // tok-train
  auto* tt = app.add_subcommand("tok-train", "train a byte-level BPE tokenizer");
  std::vector<std::string> tt_inputs, tt_reserved;
  std::size_t tt_vocab = 2048, tt_synth = 0;
  std::uint64_t tt_seed = 1;
  std::string tt_out;
  tt->add_option("--input", tt_inputs, "corpus files or directories");
  tt->add_option("--synthetic", tt_synth, "use N generated documents instead of --input");
  tt->add_option("--seed", tt_seed, "seed for --synthetic");
  tt->add_option("--vocab-size", tt_vocab, "target vocabulary size");
  tt->add_option("--reserved", tt_reserved, "special tokens");
  tt->add_option("--out", tt_out, "output tokenizer file")->required();

  // encode / decode
  auto* enc = app.add_subcommand("encode", "text to token ids");
  auto* dec = app.add_subcommand("decode", "token ids to text");
  std::string tok_path, text, input;
  bool mid = false;
  for (auto* s : {enc, dec}) {
    s->add_option("--tokenizer", tok_path, "tokenizer file")->required();
    s->add_option("--input", input, "read from file instead of stdin");
    s->add_flag("--mid", mid, "treat input as a continuation (no string-start handling)");
  }
  enc->add_option("--text", text, "text to encode");
  dec->add_option("--ids", text, "space-separated ids");

  // tokscope
  auto* ts = app.add_subcommand("tokscope", "compare two tokenizers");
  ts->require_subcommand(1);
  std::string ts_a, ts_b, ts_corpus, label_a = "A", label_b = "B";
  bool ts_json = false, ts_keep_ws = false;
  std::size_t ts_k = 10, ts_min = 10, ts_top = 10;
  auto* ts_ratio = ts->add_subcommand("ratio", "per-component token counts and ratio");
  auto* ts_worst = ts->add_subcommand("worstcase", "words tokenized most differently");
  auto* ts_long = ts->add_subcommand("longest", "longest mostly-alphabetic tokens");
  for (auto* s : {ts_ratio, ts_worst}) {
    s->add_option("--a", ts_a, "first tokenizer")->required();
    s->add_option("--b", ts_b, "second tokenizer")->required();
    s->add_option("--corpus", ts_corpus, "directory with one subdirectory per component")->required();
    s->add_option("--label-a", label_a);
    s->add_option("--label-b", label_b);
    s->add_flag("--json", ts_json, "JSON lines output");
  }
  ts_ratio->add_flag("--include-whitespace", ts_keep_ws, "count whitespace-only tokens too");
  ts_worst->add_option("--min-count", ts_min, "minimum word frequency per component");
  ts_worst->add_option("--top", ts_top, "words per direction");
  ts_long->add_option("--tokenizer", tok_path)->required();
  ts_long->add_option("--k", ts_k, "how many tokens");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string cfg_path, tr_out, tr_val;
  std::vector<std::string> tr_data, sets;
  std::size_t tr_synth = 0;
  tr->add_option("--config", cfg_path, "config file");
  tr->add_option("--tokenizer", tok_path, "tokenizer file")->required();
  tr->add_option("--data", tr_data, "training documents (files or directories)");
  tr->add_option("--synthetic", tr_synth, "use N generated documents instead of --data");
  tr->add_option("--val", tr_val, "held-out documents; default splits --data by the split key");
  tr->add_option("--out", tr_out, "directory for checkpoints and loss.jsonl")->required();
  tr->add_option("--set", sets, "key=value config override");
  tr->allow_extras();

  // eval
  auto* ev = app.add_subcommand("eval", "few-shot evaluation");
  std::vector<std::string> ev_tasks;
  std::string ev_model;
  std::size_t ev_shots = 0;
  bool ev_norm = false, ev_json = false;
  ev->add_option("--task", ev_tasks, "task JSONL file")->required();
  ev->add_option("--shots", ev_shots, "exemplars per prompt");
  ev->add_option("--model", ev_model, "model checkpoint")->required();
  ev->add_option("--tokenizer", tok_path, "tokenizer file")->required();
  ev->add_flag("--normalize", ev_norm, "length-normalize choice log-likelihoods");
  ev->add_flag("--json", ev_json, "JSON lines output");

  // plan
  auto* pl = app.add_subcommand("plan", "3D-parallel layout for a cluster");
  std::size_t nodes = 12, gpus = 8, tp = 2, pp = 4, layers = 44;
  pl->add_option("--nodes", nodes);
  pl->add_option("--gpus", gpus, "GPUs per node");
  pl->add_option("--tp", tp, "tensor parallel size");
  pl->add_option("--pp", pp, "pipeline parallel size");
  pl->add_option("--layers", layers, "layers, for all-reduce counts");

  // carbon
  auto* cb = app.add_subcommand("carbon", "grid intensity and emissions");
  std::string mix_path;
  std::vector<double> mwh;
  cb->add_option("--mix", mix_path, "energy mix file")->required();
  cb->add_option("--mwh", mwh, "energy consumed, MWh");

  // params
  auto* pa = app.add_subcommand("params", "parameter counts for a config");
  pa->add_option("--config", cfg_path, "config file");
  pa->add_option("--set", sets, "key=value config override");
  pa->allow_extras();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kUsage;
  }

  try {
    if (!isa.empty()) {
      if (isa == "scalar") kernels::set_active_isa(kernels::Isa::scalar);
      else if (isa == "avx2") kernels::set_active_isa(kernels::Isa::avx2);
      else throw ValidationError("unknown --isa " + isa);
    }

    if (*tt) {
      std::vector<std::string> docs;
      if (tt_synth > 0) docs = synthetic_documents(tt_synth, tt_seed);
      else if (!tt_inputs.empty()) docs = load_docs(tt_inputs);
      else throw ValidationError("tok-train needs --input or --synthetic");
      auto res = tok::train_bpe(docs, {tt_vocab, tt_reserved});
      for (const auto& w : res.warnings) err << "warning: " << w << '\n';
      tok::save_model(res.model, tt_out);
      out << json{{"vocab_size", res.model.vocab_size()}, {"merges", res.model.merges().size()}, {"out", tt_out}}.dump()
          << '\n';
    } else if (*enc) {
      const auto tk = tok::load_model(tok_path);
      const std::string src = !input.empty() ? read_file(input) : (enc->count("--text") ? text : read_stream(std::cin));
      const auto ids = tk.encode(src, {.at_string_start = !mid});
      for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << ids[i];
      out << '\n';
    } else if (*dec) {
      const auto tk = tok::load_model(tok_path);
      const std::string src = !input.empty() ? read_file(input) : (dec->count("--ids") ? text : read_stream(std::cin));
      out << tk.decode(parse_ids(src), {.at_string_start = !mid});
    } else if (*ts_ratio) {
      const auto a = tok::load_model(ts_a), b = tok::load_model(ts_b);
      const auto corpus = read_corpus_dir(ts_corpus);
      const auto report = tokscope::ratio_report(corpus, a, b, !ts_keep_ws);
      out << (ts_json ? tokscope::format_records(report) : tokscope::format_table(report, label_a, label_b));
    } else if (*ts_worst) {
      const auto a = tok::load_model(ts_a), b = tok::load_model(ts_b);
      for (const auto& comp : read_corpus_dir(ts_corpus)) {
        const auto r = tokscope::worst_case_words(comp, a, b, ts_min, ts_top);
        auto emit = [&](const std::vector<tokscope::WordDiscrepancy>& v, const std::string& worse) {
          for (const auto& w : v) {
            if (ts_json) {
              out << json{{"component", comp.name}, {"worse_for", worse}, {"word", w.word}, {"frequency", w.frequency},
                          {"tokens_a", w.tokens_a.size()}, {"tokens_b", w.tokens_b.size()}}
                         .dump()
                  << '\n';
            } else {
              out << comp.name << '\t' << worse << '\t' << w.word << '\t' << w.frequency << '\t' << w.tokens_a.size()
                  << '\t' << w.tokens_b.size() << '\n';
            }
          }
        };
        emit(r.worst_for_a, label_a);
        emit(r.worst_for_b, label_b);
      }
    } else if (*ts_long) {
      const auto tk = tok::load_model(tok_path);
      for (const auto& t : tokscope::longest_tokens(tk, ts_k)) {
        out << t.id << '\t' << t.bytes.size() << '\t' << tok::escape_bytes(t.bytes) << '\n';
      }
    } else if (*tr) {
      auto cfg = load_run_config(cfg_path, overrides_from(tr->remaining(), sets), err);
      const auto tk = tok::load_model(tok_path);
      if (cfg.provenance("vocab-size") == config::Provenance::default_value) {
        cfg.set("vocab-size", std::to_string(tk.vocab_size()), config::Provenance::default_value);
      }
      const auto mcfg = config::model_config(cfg);
      if (mcfg.vocab_size < tk.vocab_size()) {
        throw ValidationError("vocab-size " + std::to_string(mcfg.vocab_size) + " is smaller than the tokenizer's " +
                              std::to_string(tk.vocab_size()));
      }
      auto tcfg = config::train_config(cfg);
      fs::create_directories(tr_out);
      tcfg.checkpoint_dir = fs::path(tr_out) / "checkpoints";
      tcfg.log_path = fs::path(tr_out) / "loss.jsonl";

      std::vector<std::string> docs;
      if (tr_synth > 0) docs = synthetic_documents(tr_synth, mcfg.seed);
      else if (!tr_data.empty()) docs = load_docs(tr_data);
      else throw ValidationError("train needs --data or --synthetic");
      auto ids = encode_docs(tk, docs);
      std::vector<tok::TokenId> val;
      if (!tr_val.empty()) {
        val = encode_docs(tk, load_docs({tr_val}));
      } else {
        std::vector<double> split;
        std::istringstream ss(cfg.get_string("split"));
        for (std::string part; std::getline(ss, part, ',');) split.push_back(std::stod(part));
        double sum = 0;
        for (double s : split) sum += s;
        if (split.size() >= 2 && sum > 0) {
          const auto n_train = static_cast<std::size_t>(static_cast<double>(ids.size()) * split[0] / sum);
          const auto n_val = static_cast<std::size_t>(static_cast<double>(ids.size()) * split[1] / sum);
          val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                     ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
          ids.resize(n_train);
        }
      }
      if (val.size() < tcfg.seq_len) {
        if (!val.empty()) err << "warning: validation split shorter than one window; validation disabled\n";
        val.clear();
      }
      err << "training on " << ids.size() << " tokens, " << tcfg.batch_tokens() << " tokens per step\n";
      auto model = model::init_params(mcfg, mcfg.seed);
      const auto result = train::train(std::move(model), ids, tcfg, val, [&err](const std::string& s) {
        err << s << '\n';
      });
      const auto& first = result.log.front();
      const auto& last = result.log.back();
      out << json{{"steps", tcfg.total_steps},
                  {"initial_loss", first.train_loss},
                  {"final_loss", last.train_loss},
                  {"checkpoints", result.checkpoints.size()},
                  {"epochs_completed", result.epoch_boundaries.size()},
                  {"final_checkpoint", result.checkpoints.empty() ? "" : result.checkpoints.back().string()}}
                 .dump()
          << '\n';
    } else if (*ev) {
      const auto tk = tok::load_model(tok_path);
      const auto ck = model::load_checkpoint(ev_model);
      if (ck.model.config().vocab_size < tk.vocab_size()) throw ValidationError("model vocabulary smaller than tokenizer");
      const eval::TransformerLogits lm(ck.model);
      eval::EvalOptions opts;
      opts.length_normalize = ev_norm;
      std::vector<eval::EvalResult> results;
      for (const auto& t : ev_tasks) results.push_back(eval::evaluate(lm, tk, eval::load_task(t), ev_shots, opts));
      if (ev_json) {
        for (const auto& r : results) out << eval::format_result_record(r) << '\n';
      } else {
        out << eval::format_results_table(results);
      }
    } else if (*pl) {
      const auto l = infra::derive_layout({nodes, gpus}, tp, pp);
      const auto ser = infra::allreduce_count(layers, infra::ResidualMode::serial);
      const auto par = infra::allreduce_count(layers, infra::ResidualMode::parallel);
      out << json{{"nodes", nodes}, {"gpus_per_node", gpus}, {"tp", l.tp}, {"pp", l.pp}, {"dp", l.dp},
                  {"intra_node", l.intra_node},
                  {"allreduce_serial", {{"forward", ser.forward}, {"backward", ser.backward}}},
                  {"allreduce_parallel", {{"forward", par.forward}, {"backward", par.backward}}}}
                 .dump()
          << '\n';
    } else if (*cb) {
      const auto mix = infra::load_mix(mix_path);
      const double intensity = infra::mix_intensity(mix);
      json j{{"intensity_t_per_mwh", intensity}};
      json rows = json::array();
      for (double e : mwh) rows.push_back({{"mwh", e}, {"t_co2", infra::emissions(e, intensity)}});
      j["emissions"] = rows;
      out << j.dump() << '\n';
    } else if (*pa) {
      const auto cfg = load_run_config(cfg_path, overrides_from(pa->remaining(), sets), err);
      const auto mcfg = config::model_config(cfg);
      const auto c = model::param_count(mcfg);
      out << json{{"total", c.total}, {"non_embedding", c.non_embedding}}.dump() << '\n';
    }
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}

}  // namespace neox::cli
