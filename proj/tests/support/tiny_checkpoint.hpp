#pragma once

// A freshly initialized checkpoint with a very small model.

#include "mimic/train.hpp"

namespace mimic::testing {

inline DspConfig small_dsp() {
  DspConfig d;
  d.frame_length_s = 0.016;
  d.n_mels = 8;
  d.griffin_lim_iters = 5;
  return d;
}

inline Checkpoint make_checkpoint(Conditioning mode) {
  const DspConfig dsp = small_dsp();
  const Vocabulary vocab = Vocabulary::build({"hello world"});
  ModelConfig m;
  m.vocab_size = vocab.size();
  m.char_embed_dim = 6;
  m.prenet_dims = {8, 5};
  m.encoder_dim = 6;
  m.decoder_dim = 7;
  m.attention_dim = 5;
  m.embedding_dim = 4;
  m.n_mels = dsp.n_mels;
  m.n_linear_bins = dsp.n_bins();
  m.postnet_channels = 5;
  m.embedder_channels = 6;
  m.embedder_hidden = 5;
  m.max_decoder_steps = 6;
  m.conditioning = mode;
  m.n_speakers = mode == Conditioning::kLookup ? 2 : 0;
  TrainConfig t;
  t.conditioning = mode;
  Checkpoint ck;
  ck.dsp = dsp;
  ck.vocabulary = vocab.symbols();
  ck.norm = {-11.5, 2.0, -11.5, 2.0};
  if (mode == Conditioning::kLookup) ck.speakers = {"a", "b"};
  Trainer(m, t).export_state(ck);
  return ck;
}

}  // namespace mimic::testing
