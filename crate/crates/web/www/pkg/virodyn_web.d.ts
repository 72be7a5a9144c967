/* tslint:disable */
/* eslint-disable */

export class Certificate {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    a_star(): number;
    delta(): number;
    /**
     * Rows `t, underline_a, v_env, b_env, z_hat, z_env` on `samples` uniform
     * times in `[0, t_end]`, for data with `min a0 = min u0` and `max z0 = eps/2`.
     * Empty for an invalid certificate.
     */
    envelopes(t_end: number, samples: number): Float64Array;
    eps(): number;
    eta(): number;
    k(): number;
    valid(): boolean;
    /**
     * Empty when valid.
     */
    violation(): string;
}

/**
 * A 1D run on `[0, 16]` from `u0 = 1 + amp bump` and `v0 = w0 = z0 = eps/2 bump`.
 */
export class Simulation {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Integrates for `dt` more time units.
     */
    advance(dt: number): void;
    delta(): number;
    eps(): number;
    constructor(cells: number, beta: number, mu: number, u0_amp: number);
    sup_u_minus_1(): number;
    time(): number;
    u(): Float64Array;
    v(): Float64Array;
    w(): Float64Array;
    /**
     * Cell centres.
     */
    x(): Float64Array;
    z(): Float64Array;
}

/**
 * Searches a smallness certificate for the given parameters and `u0` range.
 */
export function certify(beta: number, mu: number, u0_min: number, u0_max: number): Certificate;

/**
 * `log10 eps` of the certificate for constant `u0 = m`, row-major over
 * `m` (rows) and `beta` (columns); NaN where no certificate exists.
 */
export function eps_map(mu: number, beta_lo: number, beta_hi: number, n_beta: number, m_lo: number, m_hi: number, n_m: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_certificate_free: (a: number, b: number) => void;
    readonly __wbg_simulation_free: (a: number, b: number) => void;
    readonly certificate_a_star: (a: number) => number;
    readonly certificate_delta: (a: number) => number;
    readonly certificate_envelopes: (a: number, b: number, c: number) => [number, number];
    readonly certificate_eps: (a: number) => number;
    readonly certificate_eta: (a: number) => number;
    readonly certificate_k: (a: number) => number;
    readonly certificate_valid: (a: number) => number;
    readonly certificate_violation: (a: number) => [number, number];
    readonly certify: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly eps_map: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number];
    readonly simulation_advance: (a: number, b: number) => [number, number];
    readonly simulation_delta: (a: number) => number;
    readonly simulation_eps: (a: number) => number;
    readonly simulation_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly simulation_sup_u_minus_1: (a: number) => number;
    readonly simulation_time: (a: number) => number;
    readonly simulation_u: (a: number) => [number, number];
    readonly simulation_v: (a: number) => [number, number];
    readonly simulation_w: (a: number) => [number, number];
    readonly simulation_x: (a: number) => [number, number];
    readonly simulation_z: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
