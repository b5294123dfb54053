#include "ssbver/profiler.hpp"

#include "ssbver/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

namespace ssbver {

namespace {

std::atomic<int> active_training{0};
volatile double latency_sink = 0.0;

void refuse_during_training() {
  if (training_in_progress()) throw ConfigError("profiler cannot run while training is in progress");
}

Image probe_image(int height, int width) {
  Image img(height, width);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 97) / 96.0;
  return img;
}

// VmHWM in kB, or 0 when /proc is unavailable.
long read_vm_hwm_kb() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream fields(line.substr(6));
      long kb = 0;
      fields >> kb;
      return kb;
    }
  }
  return 0;
}

void reset_vm_hwm() {
  std::ofstream clear("/proc/self/clear_refs");
  if (clear) clear << "5";
}

}  // namespace

TrainingGuard::TrainingGuard() { ++active_training; }
TrainingGuard::~TrainingGuard() { --active_training; }
bool training_in_progress() { return active_training.load() > 0; }

std::size_t count_params(const ParamList& params) { return element_count(params); }
std::size_t count_params(const Encoder& encoder) { return element_count(encoder.parameters()); }

double measure_latency(const Encoder& encoder, const LatencyOptions& options) {
  refuse_during_training();
  if (options.iters < 10) throw ConfigError("latency measurement needs at least 10 iterations");
  if (options.warmup < 0) throw ConfigError("warmup must be >= 0");
  const Image image = probe_image(options.height, options.width);
  const std::span<const Image> batch(&image, 1);

  for (int i = 0; i < options.warmup; ++i) encoder.forward(batch);
  std::vector<double> ms;
  ms.reserve(options.iters);
  double sink = 0.0;
  for (int i = 0; i < options.iters; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const Matrix out = encoder.forward(batch);
    const auto stop = std::chrono::steady_clock::now();
    sink += out(0, 0);
    ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  latency_sink = sink;
  const auto mid = ms.begin() + static_cast<long>(ms.size() / 2);
  std::nth_element(ms.begin(), mid, ms.end());
  if (ms.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(ms.begin(), mid);
  return 0.5 * (lower + upper);
}

double peak_forward_memory_mb(const Encoder& encoder, int height, int width) {
  refuse_during_training();
  const Image image = probe_image(height, width);
  reset_vm_hwm();
  encoder.forward(std::span<const Image>(&image, 1));
  return static_cast<double>(read_vm_hwm_kb()) / 1024.0;
}

std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::max(1u, std::thread::hardware_concurrency())) +
         " logical cores, single-threaded forward";
}

EfficiencyReport profile_encoder(const Encoder& encoder, const LatencyOptions& options) {
  EfficiencyReport r;
  r.param_count = count_params(encoder);
  r.params_millions = static_cast<double>(r.param_count) / 1e6;
  r.ms_per_image = measure_latency(encoder, options);
  r.peak_memory_mb = peak_forward_memory_mb(encoder, options.height, options.width);
  r.dims = encoder.dim();
  r.hardware_descriptor = hardware_descriptor();
  return r;
}

nlohmann::json to_json(const EfficiencyReport& report) {
  return {{"param_count", report.param_count},
          {"params_millions", report.params_millions},
          {"ms_per_image", report.ms_per_image},
          {"peak_memory_mb", report.peak_memory_mb},
          {"dims", report.dims},
          {"hardware_descriptor", report.hardware_descriptor}};
}

}  // namespace ssbver
