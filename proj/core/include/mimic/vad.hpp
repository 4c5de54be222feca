#pragma once

#include <vector>

#include "mimic/audio.hpp"
#include "mimic/dsp_config.hpp"

namespace mimic {

/// Energy VAD. A sub-frame is speech when its RMS exceeds
/// max(absolute_floor, relative_threshold * median sub-frame RMS); pauses
/// shorter than the hangover between speech sub-frames are bridged.
std::vector<bool> detect_speech(const Waveform& wave, const VadConfig& config);

/// Removes leading and trailing non-speech sub-frames; the retained span is
/// copied untouched. Throws DataError when no speech is found and
/// InputError on an empty waveform.
Waveform trim_silence(const Waveform& wave, const VadConfig& config);

}  // namespace mimic
