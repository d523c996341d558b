/* tslint:disable */
/* eslint-disable */

export class GameOutcome {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Flexible output per microgrid over the horizon, MWh.
     */
    readonly energy: Float64Array;
    /**
     * Share of held-out tests in which any microgrid missed its delivery tolerance.
     */
    readonly jointRate: number;
    readonly nodes: number;
    readonly operatorCost: number;
    /**
     * Reserve sold per microgrid over the horizon, MWh.
     */
    readonly reserve: Float64Array;
    /**
     * Per-microgrid share of tests missed.
     */
    readonly shortfall: Float64Array;
    readonly status: string;
}

/**
 * Surrogate fitted to observations `(xs[k], ys[k])` on `[lo, hi]`, evaluated at `n` grid
 * points. Returns the grid, posterior means, posterior standard deviations and expected
 * improvement over the smallest observation, `n` values each. With `fit_noise` the noise
 * variance is fitted as in the tuner, otherwise the observations are taken as exact.
 */
export function gpPosterior(xs: Float64Array, ys: Float64Array, lo: number, hi: number, n: number, fit_noise: boolean): Float64Array;

/**
 * Worst-case expected shortfall cost `Δt V sup E[ζ·R]` of fixed hourly bids `bids` at
 * `n` log-spaced radii between `10^log_lo` and `10^log_hi`. Returns the radii, then the
 * cost under the max-deviation metric, then under the Euclidean metric.
 */
export function penaltyCurve(bids: Float64Array, spread: number, seed: bigint, voll: number, log_lo: number, log_hi: number, n: number): Float64Array;

/**
 * Solves the desk market with `players` microgrids at a shared violation rate `eps`
 * (none when `eps` is not positive) and tests the reserve bids on held-out samples.
 */
export function solveDesk(eps: number, radius: number, players: number, seed: bigint): GameOutcome;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_gameoutcome_free: (a: number, b: number) => void;
    readonly gameoutcome_energy: (a: number) => [number, number];
    readonly gameoutcome_jointRate: (a: number) => number;
    readonly gameoutcome_nodes: (a: number) => number;
    readonly gameoutcome_operatorCost: (a: number) => number;
    readonly gameoutcome_reserve: (a: number) => [number, number];
    readonly gameoutcome_shortfall: (a: number) => [number, number];
    readonly gameoutcome_status: (a: number) => [number, number];
    readonly gpPosterior: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly penaltyCurve: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly solveDesk: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
