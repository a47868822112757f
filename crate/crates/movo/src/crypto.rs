//! Cryptographic primitives shared by every other module: content hashing,
//! signing keys with account-style addresses, authenticated symmetric
//! encryption, asymmetric key wrapping, and the in-memory wallet.
//!
//! Sizes are fixed across the deployment: 32-byte digests, 20-byte addresses
//! (hash-truncated public keys), 32-byte symmetric keys. The concrete
//! algorithms (SHA-256, Ed25519, ChaCha20-Poly1305, X25519) are internal
//! choices behind those contracts.

use chacha20poly1305::aead::Aead;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit};
use ed25519_dalek::{Signer, Verifier};
use rand::Rng;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as Sha2Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;
pub const SYM_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const AEAD_TAG_LEN: usize = 16;
/// Sealed blob layout is `nonce || ciphertext || tag`, so every sealed
/// payload is exactly this many bytes longer than its plaintext.
pub const SEAL_OVERHEAD: usize = NONCE_LEN + AEAD_TAG_LEN;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authentication failed: wrong key or tampered ciphertext")]
    AuthFailure,
    #[error("sealed blob too short to contain nonce and tag")]
    Truncated,
}

// ---------------------------------------------------------------------------
// Digest
// ---------------------------------------------------------------------------

/// 32-byte content hash. The universal reference for stored objects,
/// ledger transactions, channel roots, and integrity anchors.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; DIGEST_LEN] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| D::Error::custom("expected 64 hex chars"))
    }
}

/// SHA-256 of `data`. Deterministic; empty input is allowed.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of several segments with length framing, so `("ab","c")` and
/// `("a","bc")` digest differently.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part);
    }
    Digest(hasher.finalize().into())
}

// ---------------------------------------------------------------------------
// Keys, addresses, signatures
// ---------------------------------------------------------------------------

/// 20-byte account address, derived by hashing a verifying key and keeping
/// the first 20 bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Address {
    pub fn of_verifying_key(pk: &PublicKeyBytes) -> Address {
        let digest = hash(&pk.0);
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&digest.0[..ADDRESS_LEN]);
        Address(out)
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Address> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; ADDRESS_LEN] = bytes.try_into().ok()?;
        Some(Address(arr))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Address::from_hex(&s).ok_or_else(|| D::Error::custom("expected 40 hex chars"))
    }
}

/// Ed25519 verifying key bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKeyBytes(pub [u8; 32]);

/// X25519 public key bytes, used as the target of key wrapping.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExchangePublicKey(pub [u8; 32]);

/// Detached Ed25519 signature bytes.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SignatureBytes(pub [u8; 64]);

macro_rules! hex_serde_fixed {
    ($ty:ident, $len:expr) => {
        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($ty), "({})"), &hex::encode(self.0)[..12])
            }
        }
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                let bytes = hex::decode(&s).map_err(D::Error::custom)?;
                let arr: [u8; $len] = bytes
                    .try_into()
                    .map_err(|_| D::Error::custom("wrong length"))?;
                Ok($ty(arr))
            }
        }
    };
}

hex_serde_fixed!(PublicKeyBytes, 32);
hex_serde_fixed!(ExchangePublicKey, 32);
hex_serde_fixed!(SignatureBytes, 64);

/// Signing identity: an Ed25519 keypair for signatures plus an X25519
/// keypair so others can wrap secrets to this identity.
#[derive(Clone)]
pub struct KeyPair {
    signing: ed25519_dalek::SigningKey,
    exchange: x25519_dalek::StaticSecret,
}

impl KeyPair {
    pub fn generate<R: Rng>(rng: &mut R) -> KeyPair {
        let mut sk = [0u8; 32];
        rng.fill_bytes(&mut sk);
        let mut xk = [0u8; 32];
        rng.fill_bytes(&mut xk);
        KeyPair {
            signing: ed25519_dalek::SigningKey::from_bytes(&sk),
            exchange: x25519_dalek::StaticSecret::from(xk),
        }
    }

    pub fn public_key(&self) -> PublicKeyBytes {
        PublicKeyBytes(self.signing.verifying_key().to_bytes())
    }

    pub fn exchange_public(&self) -> ExchangePublicKey {
        ExchangePublicKey(x25519_dalek::PublicKey::from(&self.exchange).to_bytes())
    }

    /// Address is a pure function of the verifying key.
    pub fn address(&self) -> Address {
        Address::of_verifying_key(&self.public_key())
    }

    pub fn sign(&self, msg: &[u8]) -> SignatureBytes {
        SignatureBytes(self.signing.sign(msg).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", self.address())
    }
}

/// Verify a detached signature. Malformed keys or signatures verify as
/// false; this never panics.
pub fn verify(pk: &PublicKeyBytes, msg: &[u8], sig: &SignatureBytes) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let signature = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(msg, &signature).is_ok()
}

// ---------------------------------------------------------------------------
// Symmetric authenticated encryption
// ---------------------------------------------------------------------------

/// 32-byte key for ChaCha20-Poly1305. Each `seal` draws a fresh nonce and
/// prepends it to the ciphertext, so sealed blobs are self-contained.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SymmetricKey(pub [u8; SYM_KEY_LEN]);

hex_serde_fixed!(SymmetricKey, SYM_KEY_LEN);

impl SymmetricKey {
    pub fn generate<R: Rng>(rng: &mut R) -> SymmetricKey {
        let mut k = [0u8; SYM_KEY_LEN];
        rng.fill_bytes(&mut k);
        SymmetricKey(k)
    }

    /// Encrypt with a fresh random nonce. Output layout:
    /// `nonce(12) || ciphertext || tag(16)`.
    pub fn seal<R: Rng>(&self, rng: &mut R, plaintext: &[u8]) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        self.seal_with_nonce(&nonce, plaintext)
    }

    pub fn seal_with_nonce(&self, nonce: &[u8; NONCE_LEN], plaintext: &[u8]) -> Vec<u8> {
        let cipher = ChaCha20Poly1305::new((&self.0).into());
        let ct = cipher
            .encrypt(nonce.into(), plaintext)
            .expect("chacha20poly1305 encryption is infallible for in-memory buffers");
        let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
        out.extend_from_slice(nonce);
        out.extend_from_slice(&ct);
        out
    }

    /// Decrypt a sealed blob. Wrong key or any bit flip in nonce,
    /// ciphertext, or tag yields `AuthFailure`.
    pub fn open(&self, sealed: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if sealed.len() < SEAL_OVERHEAD {
            return Err(CryptoError::Truncated);
        }
        let (nonce, ct) = sealed.split_at(NONCE_LEN);
        let cipher = ChaCha20Poly1305::new((&self.0).into());
        let nonce: [u8; NONCE_LEN] = nonce.try_into().expect("split length");
        cipher
            .decrypt((&nonce).into(), ct)
            .map_err(|_| CryptoError::AuthFailure)
    }
}

// ---------------------------------------------------------------------------
// Key wrapping (asymmetric encryption of a symmetric key)
// ---------------------------------------------------------------------------

/// A symmetric key encrypted to a recipient's exchange public key via an
/// ephemeral Diffie-Hellman exchange.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct WrappedKey {
    pub ephemeral_pk: ExchangePublicKey,
    #[serde(with = "base64_bytes")]
    pub sealed: Vec<u8>,
}

fn wrap_aead_key(shared: &[u8; 32], eph: &ExchangePublicKey, to: &ExchangePublicKey) -> SymmetricKey {
    SymmetricKey(hash_parts(&[b"movo-key-wrap", shared, &eph.0, &to.0]).0)
}

/// Encrypt `key` so only the holder of the matching exchange secret can
/// recover it.
pub fn wrap_key<R: Rng>(rng: &mut R, to: &ExchangePublicKey, key: &SymmetricKey) -> WrappedKey {
    let mut eph_secret = [0u8; 32];
    rng.fill_bytes(&mut eph_secret);
    let eph = x25519_dalek::StaticSecret::from(eph_secret);
    let eph_pk = ExchangePublicKey(x25519_dalek::PublicKey::from(&eph).to_bytes());
    let shared = eph
        .diffie_hellman(&x25519_dalek::PublicKey::from(to.0))
        .to_bytes();
    let aead = wrap_aead_key(&shared, &eph_pk, to);
    WrappedKey {
        ephemeral_pk: eph_pk,
        sealed: aead.seal(rng, &key.0),
    }
}

/// Inverse of [`wrap_key`]: `unwrap_key(kp, wrap_key(rng, kp.exchange_public(), k)) == k`.
pub fn unwrap_key(recipient: &KeyPair, wrapped: &WrappedKey) -> Result<SymmetricKey, CryptoError> {
    let shared = recipient
        .exchange
        .diffie_hellman(&x25519_dalek::PublicKey::from(wrapped.ephemeral_pk.0))
        .to_bytes();
    let aead = wrap_aead_key(&shared, &wrapped.ephemeral_pk, &recipient.exchange_public());
    let bytes = aead.open(&wrapped.sealed)?;
    let arr: [u8; SYM_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::AuthFailure)?;
    Ok(SymmetricKey(arr))
}

// ---------------------------------------------------------------------------
// Canonical JSON
// ---------------------------------------------------------------------------

/// Deterministic encoding used for every signed payload: JSON with keys
/// sorted lexicographically, UTF-8, no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v)
        .expect("json value serializes")
        .into_bytes()
}

pub mod base64_bytes {
    //! Serde helper: `Vec<u8>` as a standard base64 string.
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s.as_bytes()).map_err(D::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Wallet
// ---------------------------------------------------------------------------

/// In-memory key wallet. Reads are cheap; writes are serialized internally,
/// so a shared wallet is safe to use from several threads.
#[derive(Default)]
pub struct Wallet {
    inner: Mutex<WalletInner>,
}

#[derive(Default)]
struct WalletInner {
    keypairs: BTreeMap<Address, KeyPair>,
    sym_keys: BTreeMap<(Digest, u64), SymmetricKey>,
}

impl Wallet {
    pub fn new() -> Wallet {
        Wallet::default()
    }

    pub fn store_keypair(&self, kp: KeyPair) -> Address {
        let addr = kp.address();
        self.inner.lock().unwrap().keypairs.insert(addr, kp);
        addr
    }

    /// `None` means absent, which is a normal outcome, not an error.
    pub fn keypair(&self, addr: &Address) -> Option<KeyPair> {
        self.inner.lock().unwrap().keypairs.get(addr).cloned()
    }

    pub fn store_sym_key(&self, channel: Digest, interval: u64, key: SymmetricKey) {
        self.inner
            .lock()
            .unwrap()
            .sym_keys
            .insert((channel, interval), key);
    }

    pub fn sym_key(&self, channel: Digest, interval: u64) -> Option<SymmetricKey> {
        self.inner
            .lock()
            .unwrap()
            .sym_keys
            .get(&(channel, interval))
            .copied()
    }
}
