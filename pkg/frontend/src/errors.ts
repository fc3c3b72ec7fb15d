// Every server error code gets its own human message; anything unmapped
// falls back to the raw code so nothing is ever silently swallowed.

export const ERROR_MESSAGES: Record<string, string> = {
  validation_error: "That input doesn't look right. Check the username and email.",
  user_exists: "That username is already registered.",
  unknown_user: "No account with that username.",
  challenge_missing: "This sign-in attempt was already used or never existed. Start again.",
  challenge_expired: "The sign-in challenge expired. Start again.",
  bad_signature: "The security key's signature didn't verify.",
  rp_id_mismatch: "The security key answered for a different site. Possible phishing.",
  counter_regression: "This security key looks cloned; the credential has been locked.",
  credential_locked: "This credential is locked. Re-enrol with your bank.",
  token_missing: "The sign-in token was already used or has expired.",
  session_invalid: "Your session expired or isn't valid from this network. Sign in again.",
  unauthenticated: "You're not signed in.",
  link_invalid: "That sign-in link was already used, expired, or damaged.",
  ip_mismatch: "This link only works from the network that requested it.",
  account_exists: "An account already exists for that user.",
  unknown_account: "No payment account found.",
  unknown_payee: "No such recipient.",
  self_transfer: "You can't pay yourself.",
  insufficient_funds: "Not enough balance for that payment.",
  bad_amount: "Enter a positive whole amount.",
  token_spent: "That payment code was already used.",
  token_expired: "That payment code has expired.",
  self_redeem: "You can't redeem your own payment code.",
  redeem_failure: "That payment code is damaged or not from this server.",
  unknown_txn: "No such transaction.",
  not_your_txn: "Only the paying party can respond to this request.",
  already_concluded: "This request was already answered.",
  illegal_transition: "That action isn't possible in the transaction's current state.",
  not_party: "Only the payer or payee can dispute this transaction.",
  not_settled: "Only settled transactions can be disputed.",
  reversal_insufficient_funds:
    "The recipient no longer holds the funds, so the dispute stays open.",
  role_required: "Only the bank can do that.",
  rate_limited: "Too many attempts. Wait a minute and try again.",
  payload_too_large: "That request is too large.",
  not_found: "Unknown endpoint.",
  bad_request: "The request was malformed.",
  duplicate_key: "That record already exists.",
  missing: "Not found.",
  key_rejected: "Unsafe identifier.",
  auth_failure: "Decryption failed: the data was tampered with.",
  internal: "The server hit an internal error.",
};

export function messageFor(code: string, fallback?: string): string {
  return ERROR_MESSAGES[code] ?? fallback ?? `Unexpected error (${code})`;
}
