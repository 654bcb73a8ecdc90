#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pc/tensor.h"

namespace pc {

enum class StreamKind { class_inc, domain_inc, task_agnostic };

std::string to_string(StreamKind kind);
StreamKind parse_stream_kind(const std::string& name);

/// Everything needed to regenerate a stream bit for bit.
struct StreamSpec {
  StreamKind kind = StreamKind::class_inc;
  std::size_t tasks = 5;
  std::size_t classes_per_task = 4;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 20;
  std::size_t patches = 16;
  std::size_t patch_dim = 4;
  std::size_t latent_dim = 8;
  /// Within-class standard deviation in latent space.
  double spread = 0.45;
  /// Rotation angle scale and shift length of each domain transform.
  double domain_shift = 0.0;
  /// Unseen domains reserved for testing (domain_inc only).
  std::size_t heldout_domains = 1;
  std::uint64_t seed = 1;
  /// Seeds the latent-to-token rendering shared by every stream and the pre-task.
  std::uint64_t world_seed = 7;

  std::size_t total_classes() const;
  void validate() const;
};

struct Sample {
  Tensor x;  // patches x patch_dim
  std::size_t y = 0;
};

struct TaskData {
  std::size_t id = 0;
  /// Label range owned by the task: [class_begin, class_end). Domain streams
  /// own the full shared range.
  std::size_t class_begin = 0;
  std::size_t class_end = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

struct TaskStream {
  StreamSpec spec;
  std::vector<TaskData> tasks;
  /// Test samples from held-out domains (domain_inc only).
  std::vector<Sample> unseen_test;
  std::vector<std::size_t> train_domains;
  std::vector<std::size_t> heldout_domain_ids;
};

TaskStream gen_class_incremental(const StreamSpec& spec);
TaskStream gen_domain_incremental(const StreamSpec& spec);
/// Dispatches on spec.kind; task_agnostic streams are generated like class_inc.
TaskStream gen_stream(const StreamSpec& spec);

/// Union of every task's test split with task identity dropped.
std::vector<Sample> gen_task_agnostic_eval(const TaskStream& stream);

/// Auxiliary classification task for warming up the backbone: classes drawn
/// independently of any stream, rendered with the same world projection.
std::vector<Sample> gen_pretask(const StreamSpec& geometry, std::size_t classes,
                                std::size_t per_class, std::uint64_t seed);

/// Hash of every byte that defines the stream (spec + generated tensors).
std::uint64_t stream_hash(const TaskStream& stream);

/// Cache layout: `<dir>/stream.json` manifest + `<dir>/stream.bin` archive.
/// load_or_generate regenerates when `regen` is set or the manifest differs.
void save_stream(const TaskStream& stream, const std::filesystem::path& dir);
TaskStream load_stream(const std::filesystem::path& dir);
TaskStream load_or_generate(const StreamSpec& spec, const std::filesystem::path& dir, bool regen);

/// Named presets: class_inc_default, domain_inc_default, task_agnostic_default.
StreamSpec stream_preset(const std::string& name);

}  // namespace pc
