#include "molace/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace molace {

namespace {

constexpr char kMagic[8] = {'M', 'O', 'L', 'A', 'C', 'E', 'K', '1'};

nlohmann::json arch_json(const TransformerConfig& c) {
  return {{"layers", c.layers}, {"d_model", c.d_model}, {"heads", c.heads},
          {"d_ff", c.d_ff},     {"context", c.context}, {"vocab", c.vocab}};
}

TransformerConfig arch_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.context = j.at("context").get<std::size_t>();
  c.vocab = j.at("vocab").get<std::size_t>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "molace-checkpoint";
  header["version"] = 1;
  header["arch"] = arch_json(ckpt.arch);
  header["vocab"] = ckpt.vocab;
  header["provenance"] = ckpt.provenance;
  if (ckpt.corpus) header["toy_corpus"] = ckpt.corpus->to_json();
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Eigen::MatrixXd*> order;
  ckpt.weights.visit([&](const std::string& name, const Eigen::MatrixXd& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    order.push_back(&m);
  });
  header["tensors"] = tensors;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ComputationError("save_checkpoint: cannot open " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* m : order) {
    // Row-major on disk regardless of Eigen storage order.
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) {
        const double v = (*m)(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
  }
  if (!out) throw ComputationError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw InvalidArgument("load_checkpoint: bad magic in " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 26)) throw InvalidArgument("load_checkpoint: bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw InvalidArgument("load_checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("load_checkpoint: header is not JSON: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.arch = arch_from_json(header.at("arch"));
    ckpt.vocab = header.at("vocab").get<std::vector<std::string>>();
    ckpt.provenance = header.value("provenance", nlohmann::json::object());
    if (header.contains("toy_corpus")) ckpt.corpus = ToyCorpusConfig::from_json(header["toy_corpus"]);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("load_checkpoint: malformed header: ") + e.what());
  }
  ckpt.arch.validate();
  if (ckpt.vocab.size() != ckpt.arch.vocab) throw InvalidArgument("load_checkpoint: vocab size mismatch");

  ckpt.weights = TransformerWeights::zeros(ckpt.arch);
  const auto& tensors = header.at("tensors");
  std::size_t idx = 0;
  ckpt.weights.visit([&](const std::string& name, Eigen::MatrixXd& m) {
    if (idx >= tensors.size()) throw InvalidArgument("load_checkpoint: missing tensor " + name);
    const auto& t = tensors[idx++];
    if (t.at("name").get<std::string>() != name || t.at("rows").get<Eigen::Index>() != m.rows() ||
        t.at("cols").get<Eigen::Index>() != m.cols())
      throw InvalidArgument("load_checkpoint: tensor table mismatch at " + name);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        m(r, c) = v;
      }
  });
  if (idx != tensors.size()) throw InvalidArgument("load_checkpoint: extra tensors in header");
  if (!in) throw InvalidArgument("load_checkpoint: truncated tensor data");
  return ckpt;
}

Checkpoint make_checkpoint(const ToyModel& toy, const ToyTrainConfig& config) {
  Checkpoint c;
  c.arch = toy.model.config();
  c.vocab = toy.corpus.vocab().tokens();
  c.weights = toy.model.weights();
  c.corpus = toy.corpus.config();
  c.provenance = {{"trainer", "train_toy"},
                  {"steps", config.steps},
                  {"batch", config.batch},
                  {"seed", config.seed},
                  {"lr", config.adam.lr},
                  {"report", toy.report.to_json()}};
  return c;
}

ToyModel toy_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.corpus) throw InvalidArgument("toy_from_checkpoint: checkpoint has no toy corpus config");
  ToyCorpus corpus(*ckpt.corpus);
  if (corpus.vocab().tokens() != ckpt.vocab) throw InvalidArgument("toy_from_checkpoint: vocabulary mismatch");
  ToyTrainReport report;
  if (ckpt.provenance.contains("report")) {
    const auto& r = ckpt.provenance["report"];
    report.final_loss = r.value("final_loss", 0.0);
    report.support_accuracy = r.value("support_accuracy", 0.0);
    report.challenge_accuracy = r.value("challenge_accuracy", 0.0);
    report.separation = r.value("separation", 0.0);
    report.separated = r.value("separated", false);
    report.steps = r.value("steps", std::size_t{0});
  }
  return ToyModel{TinyTransformerLM(ckpt.arch, Vocab(ckpt.vocab), ckpt.weights), std::move(corpus), report};
}

}  // namespace molace
