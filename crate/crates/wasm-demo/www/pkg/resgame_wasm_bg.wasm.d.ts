/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_gameoutcome_free: (a: number, b: number) => void;
export const gameoutcome_energy: (a: number) => [number, number];
export const gameoutcome_jointRate: (a: number) => number;
export const gameoutcome_nodes: (a: number) => number;
export const gameoutcome_operatorCost: (a: number) => number;
export const gameoutcome_reserve: (a: number) => [number, number];
export const gameoutcome_shortfall: (a: number) => [number, number];
export const gameoutcome_status: (a: number) => [number, number];
export const gpPosterior: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const penaltyCurve: (a: number, b: number, c: number, d: bigint, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const solveDesk: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const __externref_table_alloc: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
