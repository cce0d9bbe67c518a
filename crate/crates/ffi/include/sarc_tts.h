#ifndef SARC_TTS_H
#define SARC_TTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// `label` argument of [`sarc_synthesize`].
#define SARC_LABEL_NONE -1

#define SARC_LABEL_NEUTRAL 0

#define SARC_LABEL_SARCASTIC 1

// Result of every fallible call.
typedef enum SarcStatus {
  SARC_STATUS_OK = 0,
  SARC_STATUS_NULL_POINTER = 1,
  SARC_STATUS_INVALID_UTF8 = 2,
  SARC_STATUS_INVALID_INPUT = 3,
  SARC_STATUS_IO = 4,
  SARC_STATUS_CHECKPOINT = 5,
  SARC_STATUS_CONFIG = 6,
  SARC_STATUS_VOCODER_MISSING = 7,
  SARC_STATUS_EXTERNAL_TOOL = 8,
  SARC_STATUS_NUMERIC = 9,
  SARC_STATUS_INTERNAL = 10,
  SARC_STATUS_PANIC = 11,
} SarcStatus;

// Mono float samples at the pipeline sample rate.
typedef struct SarcAudio SarcAudio;

// A loaded sarcasm detector.
typedef struct SarcDetector SarcDetector;

// A loaded acoustic model with its vocoder.
typedef struct SarcSynthesizer SarcSynthesizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. Valid until
// the next call on this thread.
const char *sarc_last_error(void);

// Library version as a static NUL-terminated string.
const char *sarc_version(void);

// Length of sarcasm embeddings written by [`sarc_detector_predict_wav`].
size_t sarc_embedding_dim(void);

// Loads a detector checkpoint directory.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
enum SarcStatus sarc_detector_load(const char *dir, struct SarcDetector **out);

// Releases a detector; null is ignored.
//
// # Safety
// `det` must come from [`sarc_detector_load`] and not be used afterwards.
void sarc_detector_free(struct SarcDetector *det);

// Scores a WAV file. A null `transcript` runs in speech-only mode.
// `out_embedding`, if non-null, receives [`sarc_embedding_dim`] floats.
//
// # Safety
// Pointers must be valid; `out_embedding` must hold `sarc_embedding_dim()` floats.
enum SarcStatus sarc_detector_predict_wav(const struct SarcDetector *det,
                                          const char *wav_path,
                                          const char *transcript,
                                          float *out_probability,
                                          float *out_embedding);

// Loads an acoustic-model checkpoint with the built-in vocoder. A non-null
// `detector_dir` enables reference-audio conditioning.
//
// # Safety
// String arguments must be NUL-terminated or null where allowed; `out` must be writable.
enum SarcStatus sarc_synthesizer_load(const char *checkpoint,
                                      const char *detector_dir,
                                      struct SarcSynthesizer **out);

// Releases a synthesizer; null is ignored.
//
// # Safety
// `synth` must come from [`sarc_synthesizer_load`] and not be used afterwards.
void sarc_synthesizer_free(struct SarcSynthesizer *synth);

// Synthesises `text`. Conditioning is at most one of `label`
// (`SARC_LABEL_*`, label-bank lookup) and `reference_wav`; pass
// `SARC_LABEL_NONE` and null for an unconditioned model. `speaker < 0`
// means no speaker id.
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SarcStatus sarc_synthesize(const struct SarcSynthesizer *synth,
                                const char *text,
                                int32_t label,
                                const char *reference_wav,
                                int32_t speaker,
                                struct SarcAudio **out);

// Number of samples.
//
// # Safety
// `audio` must be a live handle or null (returns 0).
size_t sarc_audio_len(const struct SarcAudio *audio);

// Sample rate in Hz (0 for null).
//
// # Safety
// `audio` must be a live handle or null.
uint32_t sarc_audio_sample_rate(const struct SarcAudio *audio);

// Borrowed sample buffer, valid until the handle is freed.
//
// # Safety
// `audio` must be a live handle or null.
const float *sarc_audio_samples(const struct SarcAudio *audio);

// Writes 16-bit PCM WAV.
//
// # Safety
// `audio` must be a live handle; `path` NUL-terminated.
enum SarcStatus sarc_audio_write_wav(const struct SarcAudio *audio, const char *path);

// Releases audio; null is ignored.
//
// # Safety
// `audio` must come from [`sarc_synthesize`] and not be used afterwards.
void sarc_audio_free(struct SarcAudio *audio);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SARC_TTS_H */
