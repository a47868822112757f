//! MAM-style channels: authenticated, side-key-encrypted message streams
//! chunked into ledger transactions.
//!
//! Channel roots form a forward-linked chain (`root_i` commits to
//! `root_{i+1}` inside message i), so a reader holding any root can walk
//! forward but never backwards. Message i lives at `address = hash(root_i)`.
//!
//! Wire layout of one message before chunking:
//!
//! ```text
//! owner_pk(32) || signature(64) || sealed
//! sealed     = nonce(12) || aead(plaintext) || tag(16)
//! plaintext  = index_be(8) || next_root(32) || body
//! ```
//!
//! The signature covers `(address || sealed || next_root)`; readers verify
//! it after decrypting, so both wrong keys and flipped bits surface as
//! errors that name the failing message index.

use super::{LedgerError, Tangle, CHUNK_CAPACITY};
use crate::crypto::{
    self, hash, hash_parts, Digest, KeyPair, PublicKeyBytes, SignatureBytes, SymmetricKey,
    SEAL_OVERHEAD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Fixed bytes added around a body: owner key, signature, AEAD framing,
/// message index, and the next root.
pub const MESSAGE_OVERHEAD: usize = 32 + 64 + SEAL_OVERHEAD + 8 + 32;

/// Chunk transactions needed for a body of `len` bytes.
pub fn chunks_for_body(len: usize) -> usize {
    (MESSAGE_OVERHEAD + len).div_ceil(CHUNK_CAPACITY)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MamError {
    #[error("message {message_index}: chunk stream truncated or malformed")]
    Malformed { message_index: u64 },
    #[error("message {message_index}: decryption failed (wrong side key or corrupted chunk)")]
    DecryptFailed { message_index: u64 },
    #[error("message {message_index}: owner signature rejected")]
    BadSignature { message_index: u64 },
    #[error("message {message_index}: owner key differs from earlier messages")]
    OwnerChanged { message_index: u64 },
}

impl MamError {
    pub fn message_index(&self) -> u64 {
        match self {
            MamError::Malformed { message_index }
            | MamError::DecryptFailed { message_index }
            | MamError::BadSignature { message_index }
            | MamError::OwnerChanged { message_index } => *message_index,
        }
    }
}

/// Root of message `index` in the channel keyed by `seed`.
pub fn channel_root(seed: &[u8; 32], index: u64) -> Digest {
    hash_parts(&[b"movo-mam-root", seed, &index.to_be_bytes()])
}

/// Ledger address where the message with this root is attached.
pub fn address_of(root: &Digest) -> Digest {
    hash(&root.0)
}

fn signing_preimage(address: &Digest, sealed: &[u8], next_root: &Digest) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + sealed.len());
    out.extend_from_slice(&address.0);
    out.extend_from_slice(sealed);
    out.extend_from_slice(&next_root.0);
    out
}

/// Writer half of a channel. Single-owner: one publisher advances the root
/// chain; any number of readers may fetch concurrently.
pub struct MamChannel {
    seed: [u8; 32],
    owner: KeyPair,
    side_key: SymmetricKey,
    next_index: u64,
    nonce_rng: ChaCha12Rng,
}

/// A published message as attached to the ledger.
#[derive(Clone, Debug)]
pub struct MamMessage {
    pub index: u64,
    pub address: Digest,
    pub ciphertext: Vec<u8>,
    pub next_root: Digest,
    pub signature: SignatureBytes,
    pub chunk_tx_ids: Vec<Digest>,
}

/// A message recovered by [`mam_fetch_detailed`].
#[derive(Clone, Debug)]
pub struct FetchedMessage {
    pub index: u64,
    pub body: Vec<u8>,
    pub owner: PublicKeyBytes,
    pub chunk_tx_ids: Vec<Digest>,
}

impl MamChannel {
    pub fn generate<R: Rng>(rng: &mut R) -> MamChannel {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let owner = KeyPair::generate(rng);
        let side_key = SymmetricKey::generate(rng);
        MamChannel::from_parts(seed, owner, side_key)
    }

    pub fn from_parts(seed: [u8; 32], owner: KeyPair, side_key: SymmetricKey) -> MamChannel {
        let nonce_rng =
            ChaCha12Rng::from_seed(hash_parts(&[b"movo-mam-nonce-rng", &seed]).0);
        MamChannel {
            seed,
            owner,
            side_key,
            next_index: 0,
            nonce_rng,
        }
    }

    /// Stable channel identifier: the root of message 0.
    pub fn channel_id(&self) -> Digest {
        channel_root(&self.seed, 0)
    }

    /// Root the next publish will use; hand this to late subscribers.
    pub fn current_root(&self) -> Digest {
        channel_root(&self.seed, self.next_index)
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn side_key(&self) -> SymmetricKey {
        self.side_key
    }

    pub fn owner_public(&self) -> PublicKeyBytes {
        self.owner.public_key()
    }

    /// Encrypt, sign, chunk, and attach one message, then advance the root
    /// chain. Chunk count is `ceil((MESSAGE_OVERHEAD + body.len()) / CHUNK_CAPACITY)`.
    pub fn publish(&mut self, ledger: &Tangle, body: &[u8]) -> Result<MamMessage, LedgerError> {
        let index = self.next_index;
        let root = channel_root(&self.seed, index);
        let next_root = channel_root(&self.seed, index + 1);
        let address = address_of(&root);

        let mut plaintext = Vec::with_capacity(8 + 32 + body.len());
        plaintext.extend_from_slice(&index.to_be_bytes());
        plaintext.extend_from_slice(&next_root.0);
        plaintext.extend_from_slice(body);
        let sealed = self.side_key.seal(&mut self.nonce_rng, &plaintext);

        let signature = self
            .owner
            .sign(&signing_preimage(&address, &sealed, &next_root));

        let mut wire = Vec::with_capacity(96 + sealed.len());
        wire.extend_from_slice(&self.owner.public_key().0);
        wire.extend_from_slice(&signature.0);
        wire.extend_from_slice(&sealed);

        let mut chunk_tx_ids = Vec::with_capacity(wire.len().div_ceil(CHUNK_CAPACITY));
        for chunk in wire.chunks(CHUNK_CAPACITY) {
            chunk_tx_ids.push(ledger.attach_at(address, chunk.to_vec())?);
        }
        self.next_index += 1;
        Ok(MamMessage {
            index,
            address,
            ciphertext: sealed,
            next_root,
            signature,
            chunk_tx_ids,
        })
    }
}

/// Walk the root chain from `start_root`, returning decrypted bodies in
/// publish order. An unused root yields an empty list.
pub fn mam_fetch(
    ledger: &Tangle,
    start_root: Digest,
    side_key: &SymmetricKey,
) -> Result<Vec<Vec<u8>>, MamError> {
    Ok(mam_fetch_detailed(ledger, start_root, side_key)?
        .into_iter()
        .map(|m| m.body)
        .collect())
}

/// As [`mam_fetch`], keeping per-message metadata. Every message is
/// decrypted with the side key and signature-verified against the owner key
/// carried in its header; the owner key must not change mid-channel.
pub fn mam_fetch_detailed(
    ledger: &Tangle,
    start_root: Digest,
    side_key: &SymmetricKey,
) -> Result<Vec<FetchedMessage>, MamError> {
    let mut out = Vec::new();
    let mut root = start_root;
    let mut owner: Option<PublicKeyBytes> = None;
    let mut position = 0u64;
    loop {
        let address = address_of(&root);
        let txs = ledger.txs_at(&address);
        if txs.is_empty() {
            return Ok(out);
        }
        let wire: Vec<u8> = txs
            .iter()
            .flat_map(|tx| tx.payload.iter().copied())
            .collect();
        if wire.len() < MESSAGE_OVERHEAD {
            return Err(MamError::Malformed {
                message_index: position,
            });
        }
        let pk = PublicKeyBytes(wire[0..32].try_into().expect("fixed slice"));
        let sig = SignatureBytes(wire[32..96].try_into().expect("fixed slice"));
        let sealed = &wire[96..];
        let plaintext = side_key.open(sealed).map_err(|_| MamError::DecryptFailed {
            message_index: position,
        })?;
        if plaintext.len() < 40 {
            return Err(MamError::Malformed {
                message_index: position,
            });
        }
        let index = u64::from_be_bytes(plaintext[0..8].try_into().expect("fixed slice"));
        let next_root = Digest(plaintext[8..40].try_into().expect("fixed slice"));
        if !crypto::verify(&pk, &signing_preimage(&address, sealed, &next_root), &sig) {
            return Err(MamError::BadSignature {
                message_index: position,
            });
        }
        match owner {
            None => owner = Some(pk),
            Some(o) if o != pk => {
                return Err(MamError::OwnerChanged {
                    message_index: position,
                })
            }
            Some(_) => {}
        }
        out.push(FetchedMessage {
            index,
            body: plaintext[40..].to_vec(),
            owner: pk,
            chunk_tx_ids: txs.iter().map(|tx| tx.id).collect(),
        });
        root = next_root;
        position += 1;
    }
}
