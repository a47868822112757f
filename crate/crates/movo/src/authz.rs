//! Key-release service. Data owners register per-interval symmetric keys
//! here; consumers get them back wrapped to their exchange key, but only
//! while the ACL contract shows an active grant at request time.
//!
//! The service never hands out a key in any other form: a denial is a
//! decision, not an error in the transport sense, and the decision is a
//! pure function of the request's validity and the current chain state.

use crate::chain::Chain;
use crate::crypto::{
    canonical_json, hash, verify, Address, Digest, ExchangePublicKey, KeyPair, PublicKeyBytes,
    SignatureBytes, SymmetricKey, WrappedKey,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Reserved interval id under which a channel's MAM side key is registered;
/// real manifest intervals count up from zero and never reach it.
pub const SIDE_KEY_INTERVAL: u64 = u64::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthzError {
    #[error("registration signer is not the registered channel owner")]
    NotChannelOwner,
    #[error("channel is not registered in the ACL contract")]
    ChannelNotRegistered,
    #[error("a different key is already registered for this interval")]
    KeyConflict,
    #[error("request signature rejected")]
    BadSignature,
    #[error("requester is not authorized for this channel")]
    Unauthorized,
    #[error("no key registered for this channel and interval")]
    NotFound,
}

/// Owner-signed registration of one interval key.
#[derive(Clone, Debug)]
pub struct KeyRegistration {
    pub owner: Address,
    pub owner_pk: PublicKeyBytes,
    pub channel_root: Digest,
    pub interval_id: u64,
    pub sym_key: SymmetricKey,
    pub signature: SignatureBytes,
}

fn registration_payload(
    channel_root: &Digest,
    interval_id: u64,
    owner: &Address,
    sym_key: &SymmetricKey,
) -> Vec<u8> {
    #[derive(Serialize)]
    struct Payload<'a> {
        channel_root: &'a Digest,
        interval_id: u64,
        key_digest: Digest,
        owner: &'a Address,
    }
    canonical_json(&Payload {
        channel_root,
        interval_id,
        key_digest: hash(&sym_key.0),
        owner,
    })
}

impl KeyRegistration {
    pub fn signed(
        owner: &KeyPair,
        channel_root: Digest,
        interval_id: u64,
        sym_key: SymmetricKey,
    ) -> KeyRegistration {
        let addr = owner.address();
        let signature = owner.sign(&registration_payload(
            &channel_root,
            interval_id,
            &addr,
            &sym_key,
        ));
        KeyRegistration {
            owner: addr,
            owner_pk: owner.public_key(),
            channel_root,
            interval_id,
            sym_key,
            signature,
        }
    }
}

/// Consumer-signed request for one interval key, naming the exchange key
/// the release should be wrapped to.
#[derive(Clone, Debug)]
pub struct KeyRequest {
    pub requester: Address,
    pub requester_pk: PublicKeyBytes,
    pub exchange_pk: ExchangePublicKey,
    pub channel_root: Digest,
    pub interval_id: u64,
    pub signature: SignatureBytes,
}

fn request_payload(
    channel_root: &Digest,
    interval_id: u64,
    requester: &Address,
    exchange_pk: &ExchangePublicKey,
) -> Vec<u8> {
    #[derive(Serialize)]
    struct Payload<'a> {
        channel_root: &'a Digest,
        exchange_pk: &'a ExchangePublicKey,
        interval_id: u64,
        requester: &'a Address,
    }
    canonical_json(&Payload {
        channel_root,
        exchange_pk,
        interval_id,
        requester,
    })
}

impl KeyRequest {
    pub fn signed(
        requester: &KeyPair,
        channel_root: Digest,
        interval_id: u64,
    ) -> KeyRequest {
        let addr = requester.address();
        let exchange_pk = requester.exchange_public();
        let signature = requester.sign(&request_payload(
            &channel_root,
            interval_id,
            &addr,
            &exchange_pk,
        ));
        KeyRequest {
            requester: addr,
            requester_pk: requester.public_key(),
            exchange_pk,
            channel_root,
            interval_id,
            signature,
        }
    }
}

pub struct AuthzService {
    chain: Arc<Chain>,
    keys: Mutex<BTreeMap<(Digest, u64), SymmetricKey>>,
    wrap_rng: Mutex<ChaCha12Rng>,
}

impl AuthzService {
    pub fn new(chain: Arc<Chain>, seed: u64) -> AuthzService {
        AuthzService {
            chain,
            keys: Mutex::new(BTreeMap::new()),
            wrap_rng: Mutex::new(ChaCha12Rng::seed_from_u64(seed)),
        }
    }

    /// Accept a key if the registration is signed by the channel's
    /// registered ACL owner. Re-registering the same key is an idempotent
    /// ack; a different key for the same slot is a conflict.
    pub fn register_key(&self, reg: &KeyRegistration) -> Result<(), AuthzError> {
        if Address::of_verifying_key(&reg.owner_pk) != reg.owner {
            return Err(AuthzError::BadSignature);
        }
        let payload =
            registration_payload(&reg.channel_root, reg.interval_id, &reg.owner, &reg.sym_key);
        if !verify(&reg.owner_pk, &payload, &reg.signature) {
            return Err(AuthzError::BadSignature);
        }
        let Some(owner) = self.chain.acl_owner(&reg.channel_root) else {
            return Err(AuthzError::ChannelNotRegistered);
        };
        if owner != reg.owner {
            return Err(AuthzError::NotChannelOwner);
        }
        let mut keys = self.keys.lock().unwrap();
        match keys.get(&(reg.channel_root, reg.interval_id)) {
            Some(existing) if *existing != reg.sym_key => Err(AuthzError::KeyConflict),
            _ => {
                keys.insert((reg.channel_root, reg.interval_id), reg.sym_key);
                Ok(())
            }
        }
    }

    /// Release a key wrapped to the requester, or deny. Authorization is
    /// checked before record lookup so unauthorized callers cannot probe
    /// which intervals exist.
    pub fn request_key(&self, req: &KeyRequest) -> Result<WrappedKey, AuthzError> {
        if Address::of_verifying_key(&req.requester_pk) != req.requester {
            return Err(AuthzError::BadSignature);
        }
        let payload = request_payload(
            &req.channel_root,
            req.interval_id,
            &req.requester,
            &req.exchange_pk,
        );
        if !verify(&req.requester_pk, &payload, &req.signature) {
            return Err(AuthzError::BadSignature);
        }
        if !self.chain.is_authorized(&req.requester, &req.channel_root) {
            return Err(AuthzError::Unauthorized);
        }
        let key = {
            let keys = self.keys.lock().unwrap();
            keys.get(&(req.channel_root, req.interval_id))
                .copied()
                .ok_or(AuthzError::NotFound)?
        };
        let mut rng = self.wrap_rng.lock().unwrap();
        Ok(crate::crypto::wrap_key(&mut *rng, &req.exchange_pk, &key))
    }

    pub fn key_count(&self) -> usize {
        self.keys.lock().unwrap().len()
    }
}
