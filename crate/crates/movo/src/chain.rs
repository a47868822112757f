//! Deterministic account-based chain executing three built-in contracts:
//! the Movo token, the data-sharing ACL, and the micropayment channel.
//!
//! There is one logical sequencer. A submitted transaction is first checked
//! for validity (sender address matches the key, signature verifies, nonce
//! is the next expected); invalid transactions never reach the log. Valid
//! transactions are applied atomically: execution either succeeds or fails
//! as a unit, and either way the nonce is consumed and the transaction is
//! recorded on chain.
//!
//! Signed payloads use deterministic field-ordered JSON so two
//! implementations can agree byte-for-byte on what was signed.

use crate::clock::SimClock;
use crate::crypto::{
    canonical_json, hash, hash_parts, verify, Address, Digest, KeyPair, PublicKeyBytes,
    SignatureBytes,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;
use thiserror::Error;

/// Rejections that keep a transaction off the chain entirely.
#[derive(Debug, Error)]
pub enum ChainError {
    #[error("sender address does not match the attached public key")]
    AddressMismatch,
    #[error("transaction signature rejected")]
    BadSignature,
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("malformed tx log at line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures of an accepted transaction. The transaction is on chain and its
/// nonce is spent, but state is unchanged except for that nonce.
#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecError {
    #[error("insufficient funds: balance {balance}, needed {needed}")]
    InsufficientFunds { balance: u64, needed: u64 },
    #[error("minting is reserved to the chain's minter account")]
    NotMinter,
    #[error("channel already registered")]
    AlreadyRegistered,
    #[error("channel not registered")]
    ChannelNotRegistered,
    #[error("only the registered channel owner may do this")]
    NotChannelOwner,
    #[error("zero-deposit channels are not allowed")]
    ZeroDeposit,
    #[error("an open channel between this client and server already exists")]
    DuplicateOpen,
    #[error("unknown payment channel")]
    UnknownChannel,
    #[error("payment channel already closed")]
    AlreadyClosed,
    #[error("sender is not a party to this channel")]
    NotChannelParty,
    #[error("balance update names a different channel")]
    WrongChannel,
    #[error("balance update sequence must start at 1")]
    InvalidSeq,
    #[error("co-signature check failed")]
    BadCosignature,
    #[error("update balance {balance} exceeds deposit {deposit}")]
    BalanceExceedsDeposit { balance: u64, deposit: u64 },
    #[error("channel expires at {expires_at_ms}, now {now_ms}")]
    TimeoutNotReached { expires_at_ms: u64, now_ms: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ContractCall {
    Mint {
        to: Address,
        amount: u64,
    },
    TokenTransfer {
        to: Address,
        amount: u64,
    },
    AclRegisterChannel {
        channel_root: Digest,
    },
    AclGrant {
        consumer: Address,
        channel_root: Digest,
    },
    AclRevoke {
        consumer: Address,
        channel_root: Digest,
    },
    PaychanOpen {
        server_pk: PublicKeyBytes,
        deposit: u64,
    },
    PaychanClose {
        update: BalanceUpdate,
    },
    PaychanRefund {
        channel_id: Digest,
    },
}

/// Off-chain co-signed statement of how much of the deposit the server has
/// earned so far. `seq` starts at 1 and the balance never decreases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceUpdate {
    pub channel_id: Digest,
    pub seq: u64,
    pub balance: u64,
    pub client_sig: SignatureBytes,
    pub server_sig: SignatureBytes,
}

/// Bytes both parties sign for a balance update.
pub fn balance_update_payload(channel_id: &Digest, seq: u64, balance: u64) -> Vec<u8> {
    #[derive(Serialize)]
    struct Payload<'a> {
        balance: u64,
        channel_id: &'a Digest,
        seq: u64,
    }
    canonical_json(&Payload {
        balance,
        channel_id,
        seq,
    })
}

impl BalanceUpdate {
    /// Build and co-sign an update in one step; used where both keys are at
    /// hand (tests, scripted scenarios). Live sessions exchange signatures
    /// over the wire instead.
    pub fn cosigned(
        channel_id: Digest,
        seq: u64,
        balance: u64,
        client: &KeyPair,
        server: &KeyPair,
    ) -> BalanceUpdate {
        let payload = balance_update_payload(&channel_id, seq, balance);
        BalanceUpdate {
            channel_id,
            seq,
            balance,
            client_sig: client.sign(&payload),
            server_sig: server.sign(&payload),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTx {
    pub sender: Address,
    pub sender_pk: PublicKeyBytes,
    pub nonce: u64,
    pub call: ContractCall,
    pub signature: SignatureBytes,
}

fn signing_payload(sender: &Address, nonce: u64, call: &ContractCall) -> Vec<u8> {
    #[derive(Serialize)]
    struct Payload<'a> {
        call: &'a ContractCall,
        nonce: u64,
        sender: &'a Address,
    }
    canonical_json(&Payload {
        call,
        nonce,
        sender,
    })
}

impl ChainTx {
    pub fn signed(kp: &KeyPair, nonce: u64, call: ContractCall) -> ChainTx {
        let sender = kp.address();
        let signature = kp.sign(&signing_payload(&sender, nonce, &call));
        ChainTx {
            sender,
            sender_pk: kp.public_key(),
            nonce,
            call,
            signature,
        }
    }

    pub fn id(&self) -> Digest {
        hash(&canonical_json(self))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub server_payout: u64,
    pub client_refund: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecStatus {
    Ok,
    Failed(ExecError),
}

impl ExecStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ExecStatus::Ok)
    }
}

#[derive(Clone, Debug)]
pub struct Receipt {
    pub tx_id: Digest,
    /// Zero-based position in the chain log.
    pub height: u64,
    pub status: ExecStatus,
    /// Set by a successful `PaychanOpen`.
    pub opened_channel: Option<Digest>,
    /// Set by a successful `PaychanClose` or `PaychanRefund`.
    pub settlement: Option<Settlement>,
}

impl Receipt {
    pub fn expect_ok(self) -> Receipt {
        match &self.status {
            ExecStatus::Ok => self,
            ExecStatus::Failed(e) => panic!("transaction failed: {e}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelStatus {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentChannel {
    pub channel_id: Digest,
    pub client: Address,
    pub client_pk: PublicKeyBytes,
    pub server: Address,
    pub server_pk: PublicKeyBytes,
    pub deposit: u64,
    pub status: ChannelStatus,
    pub final_balance: Option<u64>,
    pub opened_at: u64,
    pub expires_at: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct AclGrantState {
    granted_at: u64,
    revoked: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct AclChannel {
    owner: Address,
    grants: BTreeMap<Address, AclGrantState>,
}

/// Snapshot of everything the chain tracks, in canonical JSON form.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    balances: BTreeMap<Address, u64>,
    nonces: BTreeMap<Address, u64>,
    acl: BTreeMap<Digest, AclChannel>,
    paychans: BTreeMap<Digest, PaymentChannel>,
    total_minted: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Only this account may mint tokens.
    pub minter: Address,
    /// An open payment channel becomes refundable to its client after this
    /// long without a close.
    pub channel_timeout_ms: u64,
}

pub const DEFAULT_CHANNEL_TIMEOUT_MS: u64 = 600_000;

impl ChainConfig {
    pub fn with_minter(minter: Address) -> ChainConfig {
        ChainConfig {
            minter,
            channel_timeout_ms: DEFAULT_CHANNEL_TIMEOUT_MS,
        }
    }
}

/// Log entry: the signed transaction plus the clock reading at which it
/// executed, so a replay can reproduce time-dependent state exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct LoggedTx {
    at_ms: u64,
    tx: ChainTx,
}

struct ChainInner {
    state: ChainState,
    log: Vec<LoggedTx>,
}

pub struct Chain {
    clock: SimClock,
    config: ChainConfig,
    inner: Mutex<ChainInner>,
}

impl std::fmt::Debug for Chain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock().unwrap();
        f.debug_struct("Chain")
            .field("txs", &inner.log.len())
            .field("accounts", &inner.state.balances.len())
            .finish()
    }
}

impl Chain {
    pub fn new(clock: SimClock, config: ChainConfig) -> Chain {
        Chain {
            clock,
            config,
            inner: Mutex::new(ChainInner {
                state: ChainState::default(),
                log: Vec::new(),
            }),
        }
    }

    pub fn config(&self) -> ChainConfig {
        self.config
    }

    /// Validate, sequence, and execute one transaction.
    pub fn submit(&self, tx: ChainTx) -> Result<Receipt, ChainError> {
        if Address::of_verifying_key(&tx.sender_pk) != tx.sender {
            return Err(ChainError::AddressMismatch);
        }
        let payload = signing_payload(&tx.sender, tx.nonce, &tx.call);
        if !verify(&tx.sender_pk, &payload, &tx.signature) {
            return Err(ChainError::BadSignature);
        }
        let now = self.clock.now_ms();
        let mut inner = self.inner.lock().unwrap();
        let expected = inner.state.nonces.get(&tx.sender).copied().unwrap_or(0);
        if tx.nonce != expected {
            return Err(ChainError::BadNonce {
                expected,
                got: tx.nonce,
            });
        }
        inner.state.nonces.insert(tx.sender, expected + 1);
        let (status, opened_channel, settlement) =
            execute(&mut inner.state, &self.config, now, &tx);
        let receipt = Receipt {
            tx_id: tx.id(),
            height: inner.log.len() as u64,
            status,
            opened_channel,
            settlement,
        };
        inner.log.push(LoggedTx { at_ms: now, tx });
        Ok(receipt)
    }

    /// Sign with the keypair's next nonce and submit. Panics only on lock
    /// poisoning; validity errors are impossible by construction here.
    pub fn submit_call(&self, kp: &KeyPair, call: ContractCall) -> Receipt {
        let nonce = self.expected_nonce(&kp.address());
        self.submit(ChainTx::signed(kp, nonce, call))
            .expect("self-signed tx with fresh nonce is valid")
    }

    pub fn expected_nonce(&self, addr: &Address) -> u64 {
        self.inner
            .lock()
            .unwrap()
            .state
            .nonces
            .get(addr)
            .copied()
            .unwrap_or(0)
    }

    pub fn balance(&self, addr: &Address) -> u64 {
        self.inner
            .lock()
            .unwrap()
            .state
            .balances
            .get(addr)
            .copied()
            .unwrap_or(0)
    }

    /// Active-grant check: true iff the channel is registered and the
    /// consumer holds an unrevoked grant. Anything else is a deny.
    pub fn is_authorized(&self, consumer: &Address, channel_root: &Digest) -> bool {
        let inner = self.inner.lock().unwrap();
        inner
            .state
            .acl
            .get(channel_root)
            .and_then(|ch| ch.grants.get(consumer))
            .map(|g| !g.revoked)
            .unwrap_or(false)
    }

    pub fn acl_owner(&self, channel_root: &Digest) -> Option<Address> {
        self.inner
            .lock()
            .unwrap()
            .state
            .acl
            .get(channel_root)
            .map(|ch| ch.owner)
    }

    pub fn paychan(&self, channel_id: &Digest) -> Option<PaymentChannel> {
        self.inner
            .lock()
            .unwrap()
            .state
            .paychans
            .get(channel_id)
            .cloned()
    }

    /// Number of transactions on chain (valid submissions, pass or fail).
    pub fn tx_count(&self) -> u64 {
        self.inner.lock().unwrap().log.len() as u64
    }

    /// Everything minted so far; conserved across transfers and channels.
    pub fn total_minted(&self) -> u64 {
        self.inner.lock().unwrap().state.total_minted
    }

    /// Sum of account balances plus deposits escrowed in open channels.
    /// Always equals `total_minted`.
    pub fn circulating_total(&self) -> u64 {
        let inner = self.inner.lock().unwrap();
        let balances: u64 = inner.state.balances.values().sum();
        let escrow: u64 = inner
            .state
            .paychans
            .values()
            .filter(|c| c.status == ChannelStatus::Open)
            .map(|c| c.deposit)
            .sum();
        balances + escrow
    }

    /// Canonical JSON snapshot of the full state; byte-equal across runs
    /// that applied the same transactions.
    pub fn snapshot(&self) -> String {
        let inner = self.inner.lock().unwrap();
        String::from_utf8(canonical_json(&inner.state)).expect("json is utf-8")
    }

    /// Write the transaction log as JSON-lines, one entry per line, each
    /// carrying the signed transaction and its execution time.
    pub fn export_log<W: Write>(&self, mut out: W) -> Result<(), ChainError> {
        let inner = self.inner.lock().unwrap();
        for entry in &inner.log {
            let line = serde_json::to_string(entry).map_err(|e| ChainError::MalformedLog {
                line: 0,
                reason: e.to_string(),
            })?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Rebuild a chain by replaying an exported log from genesis. The clock
    /// is advanced to each entry's recorded execution time, so the rebuilt
    /// state — including channel open and expiry timestamps — is
    /// byte-identical to the original's snapshot.
    pub fn replay<R: BufRead>(
        clock: SimClock,
        config: ChainConfig,
        input: R,
    ) -> Result<Chain, ChainError> {
        let chain = Chain::new(clock.clone(), config);
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LoggedTx =
                serde_json::from_str(&line).map_err(|e| ChainError::MalformedLog {
                    line: lineno + 1,
                    reason: e.to_string(),
                })?;
            clock.advance_to_ms(entry.at_ms);
            chain.submit(entry.tx)?;
        }
        Ok(chain)
    }
}

/// Deterministic channel id for the open tx `(client, server, nonce)`.
pub fn paychan_id(client: &Address, server: &Address, nonce: u64) -> Digest {
    hash_parts(&[
        b"movo-paychan",
        &client.0,
        &server.0,
        &nonce.to_be_bytes(),
    ])
}

type ExecOutcome = (ExecStatus, Option<Digest>, Option<Settlement>);

fn ok() -> ExecOutcome {
    (ExecStatus::Ok, None, None)
}

fn fail(e: ExecError) -> ExecOutcome {
    (ExecStatus::Failed(e), None, None)
}

fn execute(state: &mut ChainState, config: &ChainConfig, now: u64, tx: &ChainTx) -> ExecOutcome {
    match &tx.call {
        ContractCall::Mint { to, amount } => {
            if tx.sender != config.minter {
                return fail(ExecError::NotMinter);
            }
            *state.balances.entry(*to).or_insert(0) += amount;
            state.total_minted += amount;
            ok()
        }
        ContractCall::TokenTransfer { to, amount } => {
            let balance = state.balances.get(&tx.sender).copied().unwrap_or(0);
            if *amount > balance {
                return fail(ExecError::InsufficientFunds {
                    balance,
                    needed: *amount,
                });
            }
            *state.balances.entry(tx.sender).or_insert(0) -= amount;
            *state.balances.entry(*to).or_insert(0) += amount;
            ok()
        }
        ContractCall::AclRegisterChannel { channel_root } => {
            if state.acl.contains_key(channel_root) {
                return fail(ExecError::AlreadyRegistered);
            }
            state.acl.insert(
                *channel_root,
                AclChannel {
                    owner: tx.sender,
                    grants: BTreeMap::new(),
                },
            );
            ok()
        }
        ContractCall::AclGrant {
            consumer,
            channel_root,
        } => {
            let Some(channel) = state.acl.get_mut(channel_root) else {
                return fail(ExecError::ChannelNotRegistered);
            };
            if channel.owner != tx.sender {
                return fail(ExecError::NotChannelOwner);
            }
            channel.grants.insert(
                *consumer,
                AclGrantState {
                    granted_at: now,
                    revoked: false,
                },
            );
            ok()
        }
        ContractCall::AclRevoke {
            consumer,
            channel_root,
        } => {
            let Some(channel) = state.acl.get_mut(channel_root) else {
                return fail(ExecError::ChannelNotRegistered);
            };
            if channel.owner != tx.sender {
                return fail(ExecError::NotChannelOwner);
            }
            if let Some(grant) = channel.grants.get_mut(consumer) {
                grant.revoked = true;
            }
            ok()
        }
        ContractCall::PaychanOpen { server_pk, deposit } => {
            if *deposit == 0 {
                return fail(ExecError::ZeroDeposit);
            }
            let server = Address::of_verifying_key(server_pk);
            let duplicate = state.paychans.values().any(|c| {
                c.status == ChannelStatus::Open && c.client == tx.sender && c.server == server
            });
            if duplicate {
                return fail(ExecError::DuplicateOpen);
            }
            let balance = state.balances.get(&tx.sender).copied().unwrap_or(0);
            if *deposit > balance {
                return fail(ExecError::InsufficientFunds {
                    balance,
                    needed: *deposit,
                });
            }
            let channel_id = paychan_id(&tx.sender, &server, tx.nonce);
            *state.balances.entry(tx.sender).or_insert(0) -= deposit;
            state.paychans.insert(
                channel_id,
                PaymentChannel {
                    channel_id,
                    client: tx.sender,
                    client_pk: tx.sender_pk,
                    server,
                    server_pk: *server_pk,
                    deposit: *deposit,
                    status: ChannelStatus::Open,
                    final_balance: None,
                    opened_at: now,
                    expires_at: now + config.channel_timeout_ms,
                },
            );
            (ExecStatus::Ok, Some(channel_id), None)
        }
        ContractCall::PaychanClose { update } => {
            let Some(channel) = state.paychans.get(&update.channel_id) else {
                return fail(ExecError::UnknownChannel);
            };
            if channel.status == ChannelStatus::Closed {
                return fail(ExecError::AlreadyClosed);
            }
            if tx.sender != channel.client && tx.sender != channel.server {
                return fail(ExecError::NotChannelParty);
            }
            if update.seq == 0 {
                return fail(ExecError::InvalidSeq);
            }
            if update.balance > channel.deposit {
                return fail(ExecError::BalanceExceedsDeposit {
                    balance: update.balance,
                    deposit: channel.deposit,
                });
            }
            let payload =
                balance_update_payload(&update.channel_id, update.seq, update.balance);
            if !verify(&channel.client_pk, &payload, &update.client_sig)
                || !verify(&channel.server_pk, &payload, &update.server_sig)
            {
                return fail(ExecError::BadCosignature);
            }
            let settlement = Settlement {
                server_payout: update.balance,
                client_refund: channel.deposit - update.balance,
            };
            let (client, server) = (channel.client, channel.server);
            {
                let channel = state.paychans.get_mut(&update.channel_id).expect("present");
                channel.status = ChannelStatus::Closed;
                channel.final_balance = Some(update.balance);
            }
            *state.balances.entry(server).or_insert(0) += settlement.server_payout;
            *state.balances.entry(client).or_insert(0) += settlement.client_refund;
            (ExecStatus::Ok, None, Some(settlement))
        }
        ContractCall::PaychanRefund { channel_id } => {
            let Some(channel) = state.paychans.get(channel_id) else {
                return fail(ExecError::UnknownChannel);
            };
            if channel.status == ChannelStatus::Closed {
                return fail(ExecError::AlreadyClosed);
            }
            if tx.sender != channel.client {
                return fail(ExecError::NotChannelParty);
            }
            if now < channel.expires_at {
                return fail(ExecError::TimeoutNotReached {
                    expires_at_ms: channel.expires_at,
                    now_ms: now,
                });
            }
            let settlement = Settlement {
                server_payout: 0,
                client_refund: channel.deposit,
            };
            let client = channel.client;
            {
                let channel = state.paychans.get_mut(channel_id).expect("present");
                channel.status = ChannelStatus::Closed;
                channel.final_balance = Some(0);
            }
            *state.balances.entry(client).or_insert(0) += settlement.client_refund;
            (ExecStatus::Ok, None, Some(settlement))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    struct Fixture {
        clock: SimClock,
        chain: Chain,
        minter: KeyPair,
        alice: KeyPair,
        bob: KeyPair,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let clock = SimClock::new();
        let minter = KeyPair::generate(&mut rng);
        let chain = Chain::new(clock.clone(), ChainConfig::with_minter(minter.address()));
        Fixture {
            clock,
            chain,
            minter,
            alice: KeyPair::generate(&mut rng),
            bob: KeyPair::generate(&mut rng),
        }
    }

    fn mint(f: &Fixture, to: &KeyPair, amount: u64) {
        f.chain
            .submit_call(
                &f.minter,
                ContractCall::Mint {
                    to: to.address(),
                    amount,
                },
            )
            .expect_ok();
    }

    #[test]
    fn transfer_moves_tokens() {
        let f = fixture();
        mint(&f, &f.alice, 1000);
        let receipt = f.chain.submit_call(
            &f.alice,
            ContractCall::TokenTransfer {
                to: f.bob.address(),
                amount: 400,
            },
        );
        assert!(receipt.status.is_ok());
        assert_eq!(f.chain.balance(&f.alice.address()), 600);
        assert_eq!(f.chain.balance(&f.bob.address()), 400);
    }

    #[test]
    fn zero_transfer_is_a_successful_noop() {
        let f = fixture();
        mint(&f, &f.alice, 10);
        let receipt = f.chain.submit_call(
            &f.alice,
            ContractCall::TokenTransfer {
                to: f.bob.address(),
                amount: 0,
            },
        );
        assert!(receipt.status.is_ok());
        assert_eq!(f.chain.balance(&f.alice.address()), 10);
        assert_eq!(f.chain.balance(&f.bob.address()), 0);
    }

    #[test]
    fn nonce_replay_is_rejected() {
        let f = fixture();
        mint(&f, &f.alice, 100);
        let tx = ChainTx::signed(
            &f.alice,
            0,
            ContractCall::TokenTransfer {
                to: f.bob.address(),
                amount: 1,
            },
        );
        f.chain.submit(tx.clone()).unwrap();
        let err = f.chain.submit(tx).unwrap_err();
        assert!(matches!(err, ChainError::BadNonce { expected: 1, got: 0 }));
        assert_eq!(f.chain.balance(&f.bob.address()), 1);
    }

    #[test]
    fn overdraft_fails_but_consumes_the_nonce() {
        let f = fixture();
        mint(&f, &f.alice, 100);
        let before = f.chain.tx_count();
        let receipt = f.chain.submit_call(
            &f.alice,
            ContractCall::TokenTransfer {
                to: f.bob.address(),
                amount: 101,
            },
        );
        assert_eq!(
            receipt.status,
            ExecStatus::Failed(ExecError::InsufficientFunds {
                balance: 100,
                needed: 101
            })
        );
        assert_eq!(f.chain.balance(&f.alice.address()), 100);
        assert_eq!(f.chain.balance(&f.bob.address()), 0);
        assert_eq!(f.chain.tx_count(), before + 1);
        assert_eq!(f.chain.expected_nonce(&f.alice.address()), 1);
    }

    #[test]
    fn forged_signature_and_wrong_address_never_reach_the_chain() {
        let f = fixture();
        mint(&f, &f.alice, 100);
        let before = f.chain.tx_count();
        let mut tx = ChainTx::signed(
            &f.alice,
            1,
            ContractCall::TokenTransfer {
                to: f.bob.address(),
                amount: 5,
            },
        );
        tx.signature = f.bob.sign(b"unrelated");
        assert!(matches!(
            f.chain.submit(tx).unwrap_err(),
            ChainError::BadSignature
        ));

        let mut tx2 = ChainTx::signed(
            &f.alice,
            1,
            ContractCall::TokenTransfer {
                to: f.bob.address(),
                amount: 5,
            },
        );
        tx2.sender = f.bob.address();
        assert!(matches!(
            f.chain.submit(tx2).unwrap_err(),
            ChainError::AddressMismatch
        ));
        assert_eq!(f.chain.tx_count(), before);
    }

    #[test]
    fn acl_grant_flow_authorizes_the_insurer() {
        let f = fixture();
        let channel_root = hash(b"vehicle channel");
        let insurer = f.bob.address();
        f.chain
            .submit_call(&f.alice, ContractCall::AclRegisterChannel { channel_root })
            .expect_ok();
        assert!(!f.chain.is_authorized(&insurer, &channel_root));
        f.chain
            .submit_call(
                &f.alice,
                ContractCall::AclGrant {
                    consumer: insurer,
                    channel_root,
                },
            )
            .expect_ok();
        assert!(f.chain.is_authorized(&insurer, &channel_root));
        f.chain
            .submit_call(
                &f.alice,
                ContractCall::AclRevoke {
                    consumer: insurer,
                    channel_root,
                },
            )
            .expect_ok();
        assert!(!f.chain.is_authorized(&insurer, &channel_root));
    }

    #[test]
    fn acl_rejects_unregistered_channels_and_non_owners() {
        let f = fixture();
        let channel_root = hash(b"someone's channel");
        let receipt = f.chain.submit_call(
            &f.bob,
            ContractCall::AclGrant {
                consumer: f.bob.address(),
                channel_root,
            },
        );
        assert_eq!(
            receipt.status,
            ExecStatus::Failed(ExecError::ChannelNotRegistered)
        );
        f.chain
            .submit_call(&f.alice, ContractCall::AclRegisterChannel { channel_root })
            .expect_ok();
        let receipt = f.chain.submit_call(
            &f.bob,
            ContractCall::AclGrant {
                consumer: f.bob.address(),
                channel_root,
            },
        );
        assert_eq!(
            receipt.status,
            ExecStatus::Failed(ExecError::NotChannelOwner)
        );
        assert!(!f.chain.is_authorized(&f.bob.address(), &channel_root));
        let receipt = f
            .chain
            .submit_call(&f.bob, ContractCall::AclRegisterChannel { channel_root });
        assert_eq!(
            receipt.status,
            ExecStatus::Failed(ExecError::AlreadyRegistered)
        );
    }

    #[test]
    fn mint_is_reserved_to_the_minter() {
        let f = fixture();
        let receipt = f.chain.submit_call(
            &f.alice,
            ContractCall::Mint {
                to: f.alice.address(),
                amount: 1,
            },
        );
        assert_eq!(receipt.status, ExecStatus::Failed(ExecError::NotMinter));
        assert_eq!(f.chain.total_minted(), 0);
    }

    fn open_channel(f: &Fixture, deposit: u64) -> Digest {
        let receipt = f.chain.submit_call(
            &f.alice,
            ContractCall::PaychanOpen {
                server_pk: f.bob.public_key(),
                deposit,
            },
        );
        receipt.expect_ok().opened_channel.unwrap()
    }

    #[test]
    fn open_escrows_the_deposit() {
        let f = fixture();
        mint(&f, &f.alice, 500);
        let id = open_channel(&f, 100);
        assert_eq!(f.chain.balance(&f.alice.address()), 400);
        let chan = f.chain.paychan(&id).unwrap();
        assert_eq!(chan.status, ChannelStatus::Open);
        assert_eq!(chan.deposit, 100);
        assert_eq!(chan.client, f.alice.address());
        assert_eq!(chan.server, f.bob.address());
        assert_eq!(f.chain.circulating_total(), 500);
    }

    #[test]
    fn open_rejects_overdraft_zero_deposit_and_duplicates() {
        let f = fixture();
        mint(&f, &f.alice, 50);
        let r = f.chain.submit_call(
            &f.alice,
            ContractCall::PaychanOpen {
                server_pk: f.bob.public_key(),
                deposit: 51,
            },
        );
        assert!(matches!(
            r.status,
            ExecStatus::Failed(ExecError::InsufficientFunds { .. })
        ));
        let r = f.chain.submit_call(
            &f.alice,
            ContractCall::PaychanOpen {
                server_pk: f.bob.public_key(),
                deposit: 0,
            },
        );
        assert_eq!(r.status, ExecStatus::Failed(ExecError::ZeroDeposit));
        open_channel(&f, 20);
        let r = f.chain.submit_call(
            &f.alice,
            ContractCall::PaychanOpen {
                server_pk: f.bob.public_key(),
                deposit: 10,
            },
        );
        assert_eq!(r.status, ExecStatus::Failed(ExecError::DuplicateOpen));
    }

    #[test]
    fn cooperative_close_settles_per_the_update() {
        let f = fixture();
        mint(&f, &f.alice, 500);
        let id = open_channel(&f, 100);
        let update = BalanceUpdate::cosigned(id, 3, 40, &f.alice, &f.bob);
        let receipt = f
            .chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update })
            .expect_ok();
        assert_eq!(
            receipt.settlement,
            Some(Settlement {
                server_payout: 40,
                client_refund: 60
            })
        );
        assert_eq!(f.chain.balance(&f.bob.address()), 40);
        assert_eq!(f.chain.balance(&f.alice.address()), 460);
        assert_eq!(f.chain.paychan(&id).unwrap().status, ChannelStatus::Closed);
        assert_eq!(f.chain.paychan(&id).unwrap().final_balance, Some(40));
        assert_eq!(f.chain.circulating_total(), 500);
    }

    #[test]
    fn close_with_zero_balance_refunds_everything() {
        let f = fixture();
        mint(&f, &f.alice, 100);
        let id = open_channel(&f, 100);
        let update = BalanceUpdate::cosigned(id, 1, 0, &f.alice, &f.bob);
        let receipt = f
            .chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update })
            .expect_ok();
        assert_eq!(
            receipt.settlement,
            Some(Settlement {
                server_payout: 0,
                client_refund: 100
            })
        );
        assert_eq!(f.chain.balance(&f.alice.address()), 100);
    }

    #[test]
    fn close_requires_both_signatures_and_a_sane_update() {
        let f = fixture();
        mint(&f, &f.alice, 200);
        let id = open_channel(&f, 100);

        let mut update = BalanceUpdate::cosigned(id, 1, 10, &f.alice, &f.bob);
        update.server_sig = f.bob.sign(b"not the payload");
        let r = f
            .chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update });
        assert_eq!(r.status, ExecStatus::Failed(ExecError::BadCosignature));

        let update = BalanceUpdate::cosigned(id, 0, 10, &f.alice, &f.bob);
        let r = f
            .chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update });
        assert_eq!(r.status, ExecStatus::Failed(ExecError::InvalidSeq));

        let update = BalanceUpdate::cosigned(id, 1, 101, &f.alice, &f.bob);
        let r = f
            .chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update });
        assert_eq!(
            r.status,
            ExecStatus::Failed(ExecError::BalanceExceedsDeposit {
                balance: 101,
                deposit: 100
            })
        );

        let update = BalanceUpdate::cosigned(id, 1, 10, &f.alice, &f.bob);
        let r = f
            .chain
            .submit_call(&f.minter, ContractCall::PaychanClose { update });
        assert_eq!(r.status, ExecStatus::Failed(ExecError::NotChannelParty));

        // Channel is still open; a proper close works and a second one is
        // rejected.
        let update = BalanceUpdate::cosigned(id, 1, 10, &f.alice, &f.bob);
        f.chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update: update.clone() })
            .expect_ok();
        let r = f
            .chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update });
        assert_eq!(r.status, ExecStatus::Failed(ExecError::AlreadyClosed));
    }

    #[test]
    fn charging_session_takes_exactly_two_chain_txs() {
        let f = fixture();
        mint(&f, &f.alice, 1000);
        let before = f.chain.tx_count();
        let id = open_channel(&f, 100);
        let update = BalanceUpdate::cosigned(id, 7, 93, &f.alice, &f.bob);
        f.chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update })
            .expect_ok();
        assert_eq!(f.chain.tx_count() - before, 2);
    }

    #[test]
    fn timeout_refund_needs_the_expiry_to_pass() {
        let f = fixture();
        mint(&f, &f.alice, 100);
        let id = open_channel(&f, 80);
        let r = f
            .chain
            .submit_call(&f.alice, ContractCall::PaychanRefund { channel_id: id });
        assert!(matches!(
            r.status,
            ExecStatus::Failed(ExecError::TimeoutNotReached { .. })
        ));
        let r = f
            .chain
            .submit_call(&f.bob, ContractCall::PaychanRefund { channel_id: id });
        assert_eq!(r.status, ExecStatus::Failed(ExecError::NotChannelParty));

        f.clock.advance_ms(DEFAULT_CHANNEL_TIMEOUT_MS);
        let receipt = f
            .chain
            .submit_call(&f.alice, ContractCall::PaychanRefund { channel_id: id })
            .expect_ok();
        assert_eq!(
            receipt.settlement,
            Some(Settlement {
                server_payout: 0,
                client_refund: 80
            })
        );
        assert_eq!(f.chain.balance(&f.alice.address()), 100);
        assert_eq!(f.chain.circulating_total(), 100);
    }

    #[test]
    fn log_replay_reproduces_identical_state() {
        let f = fixture();
        mint(&f, &f.alice, 1000);
        mint(&f, &f.bob, 50);
        f.clock.advance_ms(3_000);
        f.chain.submit_call(
            &f.alice,
            ContractCall::TokenTransfer {
                to: f.bob.address(),
                amount: 123,
            },
        );
        let root = hash(b"chan");
        f.chain
            .submit_call(&f.alice, ContractCall::AclRegisterChannel { channel_root: root });
        f.chain.submit_call(
            &f.alice,
            ContractCall::AclGrant {
                consumer: f.bob.address(),
                channel_root: root,
            },
        );
        // Open and close at different instants so the snapshot carries
        // non-trivial timestamps that replay must reproduce.
        f.clock.advance_ms(7_500);
        let id = open_channel(&f, 100);
        f.clock.advance_ms(42_000);
        let update = BalanceUpdate::cosigned(id, 2, 55, &f.alice, &f.bob);
        f.chain
            .submit_call(&f.bob, ContractCall::PaychanClose { update });

        let mut log = Vec::new();
        f.chain.export_log(&mut log).unwrap();
        let replayed = Chain::replay(
            SimClock::new(),
            f.chain.config(),
            log.as_slice(),
        )
        .unwrap();
        assert_eq!(replayed.snapshot(), f.chain.snapshot());
        assert_eq!(replayed.tx_count(), f.chain.tx_count());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Conservation oracle: across random transfer/open/close/refund
        // sequences, balances plus open escrow always equal total minted.
        #[test]
        fn tokens_are_conserved(seed in any::<u64>(), steps in 1usize..60) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let clock = SimClock::new();
            let minter = KeyPair::generate(&mut rng);
            let chain = Chain::new(clock.clone(), ChainConfig::with_minter(minter.address()));
            let actors: Vec<KeyPair> = (0..4).map(|_| KeyPair::generate(&mut rng)).collect();
            for a in &actors {
                chain.submit_call(&minter, ContractCall::Mint { to: a.address(), amount: 500 });
            }
            let minted = chain.total_minted();
            let mut open_ids: Vec<(usize, Digest)> = Vec::new();
            for _ in 0..steps {
                let i = rng.random_range(0..actors.len());
                let j = rng.random_range(0..actors.len());
                match rng.random_range(0..4u8) {
                    0 => {
                        let amount = rng.random_range(0..700u64);
                        chain.submit_call(&actors[i], ContractCall::TokenTransfer {
                            to: actors[j].address(),
                            amount,
                        });
                    }
                    1 => {
                        let deposit = rng.random_range(0..300u64);
                        let r = chain.submit_call(&actors[i], ContractCall::PaychanOpen {
                            server_pk: actors[j].public_key(),
                            deposit,
                        });
                        if let Some(id) = r.opened_channel {
                            open_ids.push((i, id));
                        }
                    }
                    2 => {
                        if let Some((ci, id)) = open_ids.pop() {
                            let chan = chain.paychan(&id).unwrap();
                            let balance = rng.random_range(0..=chan.deposit);
                            let server = actors.iter()
                                .find(|a| a.address() == chan.server)
                                .unwrap();
                            let update = BalanceUpdate::cosigned(
                                id, 1, balance, &actors[ci], server,
                            );
                            chain.submit_call(server, ContractCall::PaychanClose { update });
                        }
                    }
                    _ => {
                        clock.advance_ms(rng.random_range(0..400_000));
                        if let Some((ci, id)) = open_ids.pop() {
                            let r = chain.submit_call(
                                &actors[ci],
                                ContractCall::PaychanRefund { channel_id: id },
                            );
                            if !r.status.is_ok() {
                                open_ids.push((ci, id));
                            }
                        }
                    }
                }
                prop_assert_eq!(chain.circulating_total(), minted);
            }
        }
    }
}
