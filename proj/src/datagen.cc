#include "pc/datagen.h"

#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "pc/random.h"
#include "pc/serialize.h"

namespace pc {
namespace {

// Salts separating the independent random sub-streams of one generator.
enum Salt : std::uint64_t {
  kSaltRender = 1,
  kSaltPrototypes = 2,
  kSaltDomains = 3,
  kSaltSamples = 4,
  kSaltPretask = 5,
};

struct ClassModel {
  std::vector<double> mean;
  std::vector<double> scale;
};

struct DomainTransform {
  std::vector<double> rotation;  // latent x latent, row-major
  std::vector<double> shift;
};

Tensor render_matrix(const StreamSpec& spec) {
  Rng rng(derive_seed(spec.world_seed, kSaltRender));
  const double std = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  return rng.normal_tensor(spec.patches * spec.patch_dim, spec.latent_dim, std * 1.5);
}

std::vector<ClassModel> class_models(std::size_t count, std::size_t latent, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ClassModel> out(count);
  for (auto& c : out) {
    c.mean.resize(latent);
    c.scale.resize(latent);
    for (double& m : c.mean) m = rng.normal();
    for (double& s : c.scale) s = rng.uniform(0.5, 1.5);
  }
  return out;
}

DomainTransform identity_transform(std::size_t latent) {
  DomainTransform t;
  t.rotation.assign(latent * latent, 0.0);
  for (std::size_t i = 0; i < latent; ++i) t.rotation[i * latent + i] = 1.0;
  t.shift.assign(latent, 0.0);
  return t;
}

// Composition of `latent` Givens rotations in random planes with angles and a
// translation proportional to `magnitude`; magnitude 0 gives the identity.
DomainTransform domain_transform(std::size_t latent, double magnitude, Rng& rng) {
  DomainTransform t = identity_transform(latent);
  for (std::size_t r = 0; r < latent; ++r) {
    const auto i = static_cast<std::size_t>(rng.next() % latent);
    auto j = static_cast<std::size_t>(rng.next() % (latent - 1));
    if (j >= i) ++j;
    const double angle = magnitude * rng.uniform(-1.0, 1.0) * std::numbers::pi / 2.0;
    const double c = std::cos(angle), s = std::sin(angle);
    // Left-multiply by the rotation acting on rows i and j.
    for (std::size_t col = 0; col < latent; ++col) {
      const double a = t.rotation[i * latent + col];
      const double b = t.rotation[j * latent + col];
      t.rotation[i * latent + col] = c * a - s * b;
      t.rotation[j * latent + col] = s * a + c * b;
    }
  }
  for (double& v : t.shift) v = magnitude * rng.normal();
  return t;
}

Sample draw_sample(const ClassModel& cls, std::size_t label, const DomainTransform& dom,
                   const Tensor& render, const StreamSpec& spec, double spread, Rng& rng) {
  const std::size_t latent = spec.latent_dim;
  std::vector<double> z(latent);
  for (std::size_t k = 0; k < latent; ++k) z[k] = cls.mean[k] + spread * cls.scale[k] * rng.normal();
  std::vector<double> zt(latent);
  for (std::size_t i = 0; i < latent; ++i) {
    double s = dom.shift[i];
    for (std::size_t k = 0; k < latent; ++k) s += dom.rotation[i * latent + k] * z[k];
    zt[i] = s;
  }
  Tensor x(spec.patches, spec.patch_dim);
  for (std::size_t r = 0; r < render.rows(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < latent; ++k) s += render(r, k) * zt[k];
    x[r] = std::tanh(s);
  }
  return Sample{std::move(x), label};
}

std::vector<Sample> draw_split(const ClassModel& cls, std::size_t label,
                               const DomainTransform& dom, const Tensor& render,
                               const StreamSpec& spec, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(draw_sample(cls, label, dom, render, spec, spec.spread, rng));
  }
  return out;
}

std::uint64_t sample_seed(const StreamSpec& spec, std::uint64_t domain, std::uint64_t label,
                          std::uint64_t split) {
  std::uint64_t s = derive_seed(spec.seed, kSaltSamples);
  s = derive_seed(s, domain);
  s = derive_seed(s, label);
  return derive_seed(s, split);
}

nlohmann::json spec_to_json(const StreamSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"tasks", s.tasks},
          {"classes_per_task", s.classes_per_task},
          {"train_per_class", s.train_per_class},
          {"test_per_class", s.test_per_class},
          {"patches", s.patches},
          {"patch_dim", s.patch_dim},
          {"latent_dim", s.latent_dim},
          {"spread", s.spread},
          {"domain_shift", s.domain_shift},
          {"heldout_domains", s.heldout_domains},
          {"seed", s.seed},
          {"world_seed", s.world_seed}};
}

StreamSpec spec_from_json(const nlohmann::json& j) {
  StreamSpec s;
  s.kind = parse_stream_kind(j.at("kind").get<std::string>());
  s.tasks = j.at("tasks").get<std::size_t>();
  s.classes_per_task = j.at("classes_per_task").get<std::size_t>();
  s.train_per_class = j.at("train_per_class").get<std::size_t>();
  s.test_per_class = j.at("test_per_class").get<std::size_t>();
  s.patches = j.at("patches").get<std::size_t>();
  s.patch_dim = j.at("patch_dim").get<std::size_t>();
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
  s.spread = j.at("spread").get<double>();
  s.domain_shift = j.at("domain_shift").get<double>();
  s.heldout_domains = j.at("heldout_domains").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.world_seed = j.at("world_seed").get<std::uint64_t>();
  return s;
}

Tensor stack_inputs(const std::vector<Sample>& samples, std::size_t width) {
  Tensor out(std::max<std::size_t>(samples.size(), 1), width);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto d = samples[i].x.data();
    std::copy(d.begin(), d.end(), out.data().begin() + i * width);
  }
  return out;
}

Tensor stack_labels(const std::vector<Sample>& samples) {
  Tensor out(std::max<std::size_t>(samples.size(), 1), 1);
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = static_cast<double>(samples[i].y);
  return out;
}

std::vector<Sample> unstack(const Tensor& xs, const Tensor& ys, std::size_t count,
                            const StreamSpec& spec) {
  std::vector<Sample> out;
  out.reserve(count);
  const std::size_t width = spec.patches * spec.patch_dim;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> d(xs.data().begin() + i * width, xs.data().begin() + (i + 1) * width);
    out.push_back(Sample{Tensor(spec.patches, spec.patch_dim, std::move(d)),
                         static_cast<std::size_t>(ys[i])});
  }
  return out;
}

}  // namespace

std::string to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::class_inc: return "class_inc";
    case StreamKind::domain_inc: return "domain_inc";
    case StreamKind::task_agnostic: return "task_agnostic";
  }
  return "unknown";
}

StreamKind parse_stream_kind(const std::string& name) {
  if (name == "class_inc") return StreamKind::class_inc;
  if (name == "domain_inc") return StreamKind::domain_inc;
  if (name == "task_agnostic") return StreamKind::task_agnostic;
  throw std::invalid_argument("unknown stream kind '" + name + "'");
}

std::size_t StreamSpec::total_classes() const {
  return kind == StreamKind::domain_inc ? classes_per_task : tasks * classes_per_task;
}

void StreamSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("stream spec: " + what); };
  if (tasks == 0) fail("tasks must be positive");
  if (classes_per_task == 0) fail("classes_per_task must be positive");
  if (train_per_class == 0 || test_per_class == 0) fail("per-class sample counts must be positive");
  if (patches == 0 || patch_dim == 0) fail("token grid must be non-empty");
  if (latent_dim < 2) fail("latent_dim must be at least 2");
  if (!(spread >= 0.0) || !std::isfinite(spread)) fail("spread must be finite and >= 0");
  if (!(domain_shift >= 0.0) || !std::isfinite(domain_shift)) {
    fail("domain_shift must be finite and >= 0");
  }
  if (kind == StreamKind::domain_inc) {
    if (tasks < 2) fail("domain_inc needs at least 2 training domains");
    if (heldout_domains < 1) fail("domain_inc needs at least 1 held-out domain");
  }
}

TaskStream gen_class_incremental(const StreamSpec& spec) {
  spec.validate();
  if (spec.kind == StreamKind::domain_inc) {
    throw std::invalid_argument("gen_class_incremental called with a domain_inc spec");
  }
  const Tensor render = render_matrix(spec);
  const auto classes = class_models(spec.total_classes(), spec.latent_dim,
                                    derive_seed(spec.seed, kSaltPrototypes));
  const DomainTransform id = identity_transform(spec.latent_dim);
  TaskStream stream;
  stream.spec = spec;
  for (std::size_t t = 0; t < spec.tasks; ++t) {
    TaskData task;
    task.id = t;
    task.class_begin = t * spec.classes_per_task;
    task.class_end = (t + 1) * spec.classes_per_task;
    for (std::size_t c = task.class_begin; c < task.class_end; ++c) {
      auto train = draw_split(classes[c], c, id, render, spec, spec.train_per_class,
                              sample_seed(spec, 0, c, 0));
      auto test = draw_split(classes[c], c, id, render, spec, spec.test_per_class,
                             sample_seed(spec, 0, c, 1));
      task.train.insert(task.train.end(), train.begin(), train.end());
      task.test.insert(task.test.end(), test.begin(), test.end());
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

TaskStream gen_domain_incremental(const StreamSpec& spec) {
  spec.validate();
  if (spec.kind != StreamKind::domain_inc) {
    throw std::invalid_argument("gen_domain_incremental called with a non-domain spec");
  }
  const Tensor render = render_matrix(spec);
  const std::size_t n_classes = spec.total_classes();
  const auto classes =
      class_models(n_classes, spec.latent_dim, derive_seed(spec.seed, kSaltPrototypes));
  Rng dom_rng(derive_seed(spec.seed, kSaltDomains));
  std::vector<DomainTransform> domains;
  for (std::size_t d = 0; d < spec.tasks + spec.heldout_domains; ++d) {
    domains.push_back(domain_transform(spec.latent_dim, spec.domain_shift, dom_rng));
  }
  TaskStream stream;
  stream.spec = spec;
  for (std::size_t d = 0; d < spec.tasks; ++d) {
    TaskData task;
    task.id = d;
    task.class_begin = 0;
    task.class_end = n_classes;
    for (std::size_t c = 0; c < n_classes; ++c) {
      auto train = draw_split(classes[c], c, domains[d], render, spec, spec.train_per_class,
                              sample_seed(spec, d, c, 0));
      auto test = draw_split(classes[c], c, domains[d], render, spec, spec.test_per_class,
                             sample_seed(spec, d, c, 1));
      task.train.insert(task.train.end(), train.begin(), train.end());
      task.test.insert(task.test.end(), test.begin(), test.end());
    }
    stream.tasks.push_back(std::move(task));
    stream.train_domains.push_back(d);
  }
  for (std::size_t d = spec.tasks; d < domains.size(); ++d) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      auto test = draw_split(classes[c], c, domains[d], render, spec, spec.test_per_class,
                             sample_seed(spec, d, c, 1));
      stream.unseen_test.insert(stream.unseen_test.end(), test.begin(), test.end());
    }
    stream.heldout_domain_ids.push_back(d);
  }
  return stream;
}

TaskStream gen_stream(const StreamSpec& spec) {
  return spec.kind == StreamKind::domain_inc ? gen_domain_incremental(spec)
                                             : gen_class_incremental(spec);
}

std::vector<Sample> gen_task_agnostic_eval(const TaskStream& stream) {
  std::vector<Sample> merged;
  for (const auto& t : stream.tasks) merged.insert(merged.end(), t.test.begin(), t.test.end());
  return merged;
}

std::vector<Sample> gen_pretask(const StreamSpec& geometry, std::size_t classes,
                                std::size_t per_class, std::uint64_t seed) {
  const Tensor render = render_matrix(geometry);
  const std::uint64_t base = derive_seed(seed, kSaltPretask);
  const auto models = class_models(classes, geometry.latent_dim, derive_seed(base, 0));
  const DomainTransform id = identity_transform(geometry.latent_dim);
  std::vector<Sample> out;
  for (std::size_t c = 0; c < classes; ++c) {
    auto part = draw_split(models[c], c, id, render, geometry, per_class, derive_seed(base, c + 1));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::uint64_t stream_hash(const TaskStream& stream) {
  std::uint64_t h = 14695981039346656037ULL;
  const std::string spec = spec_to_json(stream.spec).dump();
  for (unsigned char c : spec) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  auto mix_samples = [&h](const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
      h = content_hash(s.x, h);
      h = content_hash(Tensor::scalar(static_cast<double>(s.y)), h);
    }
  };
  for (const auto& t : stream.tasks) {
    mix_samples(t.train);
    mix_samples(t.test);
  }
  mix_samples(stream.unseen_test);
  return h;
}

void save_stream(const TaskStream& stream, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t width = stream.spec.patches * stream.spec.patch_dim;
  std::vector<NamedTensor> entries;
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : stream.tasks) {
    const std::string base = "task" + std::to_string(t.id);
    entries.push_back({base + ".train.x", stack_inputs(t.train, width)});
    entries.push_back({base + ".train.y", stack_labels(t.train)});
    entries.push_back({base + ".test.x", stack_inputs(t.test, width)});
    entries.push_back({base + ".test.y", stack_labels(t.test)});
    tasks.push_back({{"id", t.id},
                     {"class_begin", t.class_begin},
                     {"class_end", t.class_end},
                     {"train", t.train.size()},
                     {"test", t.test.size()}});
  }
  entries.push_back({"unseen.x", stack_inputs(stream.unseen_test, width)});
  entries.push_back({"unseen.y", stack_labels(stream.unseen_test)});
  write_archive(dir / "stream.bin", entries);
  nlohmann::json manifest = {{"spec", spec_to_json(stream.spec)},
                             {"tasks", tasks},
                             {"unseen", stream.unseen_test.size()},
                             {"train_domains", stream.train_domains},
                             {"heldout_domains", stream.heldout_domain_ids},
                             {"hash", stream_hash(stream)}};
  write_text(dir / "stream.json", manifest.dump(2) + "\n");
}

TaskStream load_stream(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text(dir / "stream.json"));
  const auto entries = read_archive(dir / "stream.bin");
  auto find = [&entries, &dir](const std::string& name) -> const Tensor& {
    for (const auto& e : entries) {
      if (e.name == name) return e.value;
    }
    throw FormatError("stream cache " + dir.string() + " lacks entry " + name);
  };
  TaskStream stream;
  stream.spec = spec_from_json(manifest.at("spec"));
  for (const auto& tj : manifest.at("tasks")) {
    TaskData t;
    t.id = tj.at("id").get<std::size_t>();
    t.class_begin = tj.at("class_begin").get<std::size_t>();
    t.class_end = tj.at("class_end").get<std::size_t>();
    const std::string base = "task" + std::to_string(t.id);
    t.train = unstack(find(base + ".train.x"), find(base + ".train.y"),
                      tj.at("train").get<std::size_t>(), stream.spec);
    t.test = unstack(find(base + ".test.x"), find(base + ".test.y"),
                     tj.at("test").get<std::size_t>(), stream.spec);
    stream.tasks.push_back(std::move(t));
  }
  stream.unseen_test = unstack(find("unseen.x"), find("unseen.y"),
                               manifest.at("unseen").get<std::size_t>(), stream.spec);
  stream.train_domains = manifest.at("train_domains").get<std::vector<std::size_t>>();
  stream.heldout_domain_ids = manifest.at("heldout_domains").get<std::vector<std::size_t>>();
  if (stream_hash(stream) != manifest.at("hash").get<std::uint64_t>()) {
    throw FormatError("stream cache " + dir.string() + " failed its hash check");
  }
  return stream;
}

TaskStream load_or_generate(const StreamSpec& spec, const std::filesystem::path& dir,
                            bool regen) {
  if (!regen && std::filesystem::exists(dir / "stream.json")) {
    const auto manifest = nlohmann::json::parse(read_text(dir / "stream.json"));
    if (manifest.at("spec") == spec_to_json(spec)) return load_stream(dir);
  }
  TaskStream stream = gen_stream(spec);
  save_stream(stream, dir);
  return stream;
}

StreamSpec stream_preset(const std::string& name) {
  StreamSpec s;
  if (name == "class_inc_default") return s;
  if (name == "task_agnostic_default") {
    s.kind = StreamKind::task_agnostic;
    return s;
  }
  if (name == "domain_inc_default") {
    s.kind = StreamKind::domain_inc;
    s.tasks = 4;
    s.classes_per_task = 5;
    s.domain_shift = 0.5;
    s.heldout_domains = 2;
    return s;
  }
  throw std::invalid_argument("unknown stream preset '" + name + "'");
}

}  // namespace pc
