//! Identities, hashing, sealed inbox messages and the hashcash-style
//! challenge-response used to establish trust with unknown comrades.
//!
//! Byte layouts are fixed so that independent implementations interoperate:
//!
//! * challenge preimage: `issuer_pk ‖ LE8(rand1) ‖ LE8(rand2)`, hashed with SHA-256
//! * sealed message: `recipient_key_hash (20 bytes) ‖ ciphertext`

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Digest32 = [u8; 32];

/// Length of public keys produced by [`ClientIdentity::generate`].
pub const PUBLIC_KEY_LEN: usize = 32;
pub const MIN_PUBLIC_KEY_LEN: usize = 32;
pub const MAX_PUBLIC_KEY_LEN: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("no solution in [0, {max_rand}] after {work} hash evaluations")]
    NoSolution { max_rand: u64, work: u64 },
    #[error("message is not addressed to this identity")]
    NotAddressee,
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("recipient public key is empty")]
    EmptyRecipient,
    #[error("malformed sealed message ({0} bytes)")]
    Malformed(usize),
}

/// SHA-256 of the exact input bytes.
pub fn hash_bytes(data: &[u8]) -> Digest32 {
    Sha256::digest(data).into()
}

/// First 20 bytes of the SHA-256 of `data`.
pub fn hash20(data: &[u8]) -> [u8; 20] {
    let full = hash_bytes(data);
    let mut out = [0u8; 20];
    out.copy_from_slice(&full[..20]);
    out
}

/// A client's keying material. The public key is both its DHT identity and
/// its inbox address; the private key never leaves the owning client.
#[derive(Clone, PartialEq, Eq)]
pub struct ClientIdentity {
    public_key: Vec<u8>,
    private_key: Vec<u8>,
}

impl ClientIdentity {
    /// Derives a fresh identity from the RNG. The public key is bound to the
    /// private key through a hash, so one can be checked against the other.
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut private_key = vec![0u8; 32];
        rng.fill_bytes(&mut private_key);
        Self::from_private_key(private_key)
    }

    pub fn from_private_key(private_key: Vec<u8>) -> Self {
        let public_key = derive_public_key(&private_key).to_vec();
        Self {
            public_key,
            private_key,
        }
    }

    pub fn public_key(&self) -> &[u8] {
        &self.public_key
    }

    /// Canonical encoding: the raw public key bytes. Stable across calls.
    pub fn encode(&self) -> Vec<u8> {
        self.public_key.clone()
    }

    pub fn key_hash(&self) -> [u8; 20] {
        hash20(&self.public_key)
    }

    pub(crate) fn private_key(&self) -> &[u8] {
        &self.private_key
    }
}

impl fmt::Debug for ClientIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientIdentity")
            .field("public_key", &hex::encode(&self.public_key))
            .finish_non_exhaustive()
    }
}

fn derive_public_key(private_key: &[u8]) -> Digest32 {
    let mut h = Sha256::new();
    h.update(b"comrades/pk");
    h.update(private_key);
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    #[serde(with = "hex::serde")]
    pub issuer_public_key: Vec<u8>,
    pub rand1: u64,
    #[serde(with = "hex::serde")]
    pub target_hash: Digest32,
    pub issued_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeSolution {
    #[serde(with = "hex::serde")]
    pub solver_public_key: Vec<u8>,
    pub rand2: u64,
}

/// Result of a successful brute-force search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Solved {
    pub solution: u64,
    /// Number of hash evaluations performed.
    pub work: u64,
}

pub fn challenge_hash(issuer_public_key: &[u8], rand1: u64, rand2: u64) -> Digest32 {
    let mut h = Sha256::new();
    h.update(issuer_public_key);
    h.update(rand1.to_le_bytes());
    h.update(rand2.to_le_bytes());
    h.finalize().into()
}

/// Draws `rand1` and `rand2` uniformly from `[0, max_rand]` (in that order)
/// and returns the challenge together with the answer the issuer keeps.
pub fn generate_challenge<R: Rng + ?Sized>(
    issuer: &ClientIdentity,
    max_rand: u64,
    issued_at: u64,
    rng: &mut R,
) -> (Challenge, u64) {
    let rand1 = rng.gen_range(0..=max_rand);
    let rand2 = rng.gen_range(0..=max_rand);
    let challenge = Challenge {
        issuer_public_key: issuer.public_key.clone(),
        rand1,
        target_hash: challenge_hash(&issuer.public_key, rand1, rand2),
        issued_at,
    };
    (challenge, rand2)
}

/// Linear search from 0 upwards for the `rand2` that reproduces the target
/// hash. `max_rand` is the solver's own bound.
pub fn solve_challenge(challenge: &Challenge, max_rand: u64) -> Result<Solved, CryptoError> {
    let mut search = CandidateHasher::new(&challenge.issuer_public_key, challenge.rand1);
    let target = digest_words(&challenge.target_hash);
    let mut test: u64 = 0;
    loop {
        if search.hash_words(test) == target {
            return Ok(Solved {
                solution: test,
                work: test + 1,
            });
        }
        if test == max_rand {
            return Err(CryptoError::NoSolution {
                max_rand,
                work: max_rand.saturating_add(1),
            });
        }
        test += 1;
    }
}

const SHA256_IV: [u32; 8] = [
    0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
];

type Block = sha2::digest::generic_array::GenericArray<u8, sha2::digest::consts::U64>;

fn digest_words(digest: &Digest32) -> [u32; 8] {
    let mut words = [0u32; 8];
    for (w, chunk) in words.iter_mut().zip(digest.chunks_exact(4)) {
        *w = u32::from_be_bytes(chunk.try_into().expect("4-byte chunk"));
    }
    words
}

/// SHA-256 of `prefix ‖ LE8(rand2)` for many `rand2`: the message is padded
/// once, blocks entirely inside the prefix are compressed once, and only
/// the 8 candidate bytes change between evaluations.
struct CandidateHasher {
    midstate: [u32; 8],
    tail: Vec<Block>,
    slot: usize,
}

impl CandidateHasher {
    fn new(issuer_public_key: &[u8], rand1: u64) -> Self {
        let mut prefix = issuer_public_key.to_vec();
        prefix.extend_from_slice(&rand1.to_le_bytes());
        let total = prefix.len() + 8;
        let full = prefix.len() / 64;

        let mut midstate = SHA256_IV;
        let head: Vec<Block> = prefix[..full * 64].chunks_exact(64).map(Block::clone_from_slice).collect();
        sha2::compress256(&mut midstate, &head);

        let mut tail_bytes = prefix[full * 64..].to_vec();
        let slot = tail_bytes.len();
        tail_bytes.extend_from_slice(&[0u8; 8]);
        tail_bytes.push(0x80);
        while tail_bytes.len() % 64 != 56 {
            tail_bytes.push(0);
        }
        tail_bytes.extend_from_slice(&((total as u64) * 8).to_be_bytes());
        let tail = tail_bytes.chunks_exact(64).map(Block::clone_from_slice).collect();
        Self { midstate, tail, slot }
    }

    fn hash_words(&mut self, rand2: u64) -> [u32; 8] {
        for (i, b) in rand2.to_le_bytes().into_iter().enumerate() {
            let at = self.slot + i;
            self.tail[at / 64][at % 64] = b;
        }
        let mut state = self.midstate;
        sha2::compress256(&mut state, &self.tail);
        state
    }
}

pub fn verify_solution(challenge: &Challenge, rand2: u64) -> bool {
    challenge_hash(&challenge.issuer_public_key, challenge.rand1, rand2) == challenge.target_hash
}

/// An inbox message readable only by its addressee.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedMessage {
    pub recipient_key_hash: [u8; 20],
    pub ciphertext: Vec<u8>,
}

impl SealedMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.ciphertext.len());
        out.extend_from_slice(&self.recipient_key_hash);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < 20 {
            return Err(CryptoError::Malformed(bytes.len()));
        }
        let mut recipient_key_hash = [0u8; 20];
        recipient_key_hash.copy_from_slice(&bytes[..20]);
        Ok(Self {
            recipient_key_hash,
            ciphertext: bytes[20..].to_vec(),
        })
    }
}

/// Pluggable sealing backend.
pub trait SealProvider {
    fn seal(&self, recipient_public_key: &[u8], plaintext: &[u8]) -> Result<SealedMessage, CryptoError>;
    fn open(&self, identity: &ClientIdentity, msg: &SealedMessage) -> Result<Vec<u8>, CryptoError>;
}

/// Deterministic simulation provider.
///
/// The keystream is derived from the recipient's public key, so this gives
/// no confidentiality against a party that knows the key. It enforces the
/// addressing contract (only the identity whose key hash matches can open)
/// and detects tampering through a 16-byte tag.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimSealProvider;

const TAG_LEN: usize = 16;

impl SimSealProvider {
    fn keystream_xor(public_key: &[u8], data: &mut [u8]) {
        for (block, chunk) in data.chunks_mut(32).enumerate() {
            let mut h = Sha256::new();
            h.update(b"comrades/seal");
            h.update(public_key);
            h.update((block as u64).to_le_bytes());
            let ks: Digest32 = h.finalize().into();
            for (b, k) in chunk.iter_mut().zip(ks.iter()) {
                *b ^= k;
            }
        }
    }

    fn tag(public_key: &[u8], plaintext: &[u8]) -> [u8; TAG_LEN] {
        let mut h = Sha256::new();
        h.update(b"comrades/tag");
        h.update(public_key);
        h.update(plaintext);
        let full: Digest32 = h.finalize().into();
        let mut out = [0u8; TAG_LEN];
        out.copy_from_slice(&full[..TAG_LEN]);
        out
    }
}

impl SealProvider for SimSealProvider {
    fn seal(&self, recipient_public_key: &[u8], plaintext: &[u8]) -> Result<SealedMessage, CryptoError> {
        if recipient_public_key.is_empty() {
            return Err(CryptoError::EmptyRecipient);
        }
        let mut body = plaintext.to_vec();
        body.extend_from_slice(&Self::tag(recipient_public_key, plaintext));
        Self::keystream_xor(recipient_public_key, &mut body);
        Ok(SealedMessage {
            recipient_key_hash: hash20(recipient_public_key),
            ciphertext: body,
        })
    }

    fn open(&self, identity: &ClientIdentity, msg: &SealedMessage) -> Result<Vec<u8>, CryptoError> {
        if msg.recipient_key_hash != identity.key_hash() {
            return Err(CryptoError::NotAddressee);
        }
        // The identity must hold the private key behind its public key.
        if derive_public_key(identity.private_key()).as_slice() != identity.public_key() {
            return Err(CryptoError::DecryptionFailure);
        }
        if msg.ciphertext.len() < TAG_LEN {
            return Err(CryptoError::DecryptionFailure);
        }
        let mut body = msg.ciphertext.clone();
        Self::keystream_xor(identity.public_key(), &mut body);
        let split = body.len() - TAG_LEN;
        let (plain, tag) = body.split_at(split);
        if tag != Self::tag(identity.public_key(), plain) {
            return Err(CryptoError::DecryptionFailure);
        }
        Ok(plain.to_vec())
    }
}

pub fn seal(recipient_public_key: &[u8], plaintext: &[u8]) -> Result<SealedMessage, CryptoError> {
    SimSealProvider.seal(recipient_public_key, plaintext)
}

pub fn open(identity: &ClientIdentity, msg: &SealedMessage) -> Result<Vec<u8>, CryptoError> {
    SimSealProvider.open(identity, msg)
}
