/* Copyright 2026 The Handpress Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef HANDPRESS_SYNC_HPP_
#define HANDPRESS_SYNC_HPP_

#include <string>
#include <vector>

#include "handpress/core.hpp"

namespace handpress {

struct UnanchoredStreamError : DataError {
  using DataError::DataError;
};

/// Per-device frame stream around the marker activation/deactivation edges.
/// Device ticks are an opaque monotonic clock; their absolute value carries
/// no meaning across devices. The trigger delay is the device's configured
/// offset from the shared trigger signal.
struct DeviceStream {
  std::string device_id;
  double nominal_rate_hz = 30.0;
  double tick_rate_hz = 300000.0;  // device ticks per second
  double trigger_delay_s = 0.0;
  std::vector<int64_t> ticks;      // strictly increasing, one per frame
  std::vector<bool> marker_visible;
  double t0 = 0;  // recorded global activation timestamp (s)
  double t1 = 0;  // recorded global deactivation timestamp (s)

  void validate() const;
};

struct DeviceSync {
  std::string device_id;
  int anchor_index = -1;            // first marker-visible frame
  std::vector<double> timestamps;   // global (s), one per frame
  int frames_between = -1;          // frames in [t0, t1); -1 without t1 edge
  bool degraded = false;            // deactivation edge missing
};

struct SyncReport {
  std::vector<DeviceSync> devices;
  bool counts_verified = false;     // all non-degraded counts equal
  std::vector<std::string> mismatched_devices;
};

/// Anchors each stream's first marker-visible frame to the first exposure
/// after t0 (t0 + trigger delay) and assigns global timestamps to all frames
/// via tick offsets. Verifies the equal-frame-count condition between t0 and
/// t1. Throws UnanchoredStreamError when a stream lacks the activation edge.
SyncReport synchronize(const std::vector<DeviceStream>& streams);

// ----------------------------------------------------------------------------
// Simulation harness

struct SimRigConfig {
  int devices = 8;
  double rate_hz = 30.0;
  double tick_rate_hz = 300000.0;
  double duration_s = 2.0;
  double activation_s = 0.3;   // t0 target (snapped to the trigger grid)
  int initial_loss_min = 1;    // frames lost at recording start, inclusive
  int initial_loss_max = 3;
  int midstream_loss_devices = 0;  // devices that drop one visible frame
  double max_delay_fraction = 0.5; // trigger delays in [0, fraction * period)
};

struct SimulatedRig {
  std::vector<DeviceStream> streams;
  std::vector<std::vector<double>> true_timestamps;  // exposure times per frame
  double t0 = 0, t1 = 0;
  bool midstream_loss_injected = false;
};

/// Deterministic given (config, seed).
SimulatedRig simulate_rig(const SimRigConfig& config, uint64_t seed);

// Stream files: CSV {frame_idx, device_tick, marker_visible} plus a JSON
// timing sidecar carried in the header comment lines.
void save_stream_csv(const DeviceStream& stream, const std::string& path);
DeviceStream load_stream_csv(const std::string& path);

}  // namespace handpress

#endif  // HANDPRESS_SYNC_HPP_
