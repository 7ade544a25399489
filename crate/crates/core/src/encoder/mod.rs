//! Document encoding: marker insertion, the encoder backend contract with a
//! toy transformer implementation, chunked encoding and entity/context
//! pooling.

mod backend;
mod chunk;
mod markers;
mod pooling;

pub use backend::{Encoded, EncoderBackend, ToyTransformer, ToyTransformerConfig};
pub use chunk::{chunk_starts, encode_chunked};
pub use markers::{insert_markers, MarkedSequence, Vocab, MARKER, UNK};
pub use pooling::{
    context_vector, fuse_context, fuse_pairs, pair_contexts, pool_entities, pool_entity,
    pool_entity_attention, pool_entity_attentions, FuseParams,
};
